#include "glyphsr/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include "glyphsr/errors.hpp"

namespace glyphsr {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'R', '1'};
constexpr std::uint8_t kDtypeF64 = 1;

static_assert(sizeof(double) == 8, "checkpoints store IEEE binary64");

template <typename T>
void put(std::ostream& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
#if __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::reverse(b, b + sizeof(T));
#endif
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::string& what) {
    unsigned char b[sizeof(T)];
    in.read(reinterpret_cast<char*>(b), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw IOFailure("checkpoint truncated in " + what);
#if __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::reverse(b, b + sizeof(T));
#endif
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

struct Record {
    std::vector<int> dims;
    std::vector<double> data;
};

void write_record(std::ostream& out, const std::string& name, const std::vector<int>& dims,
                  const std::vector<double>& data) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : data) put<double>(out, v);
}

Json read_header(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw IOFailure("not a checkpoint (bad magic)");
    const auto len = take<std::uint64_t>(in, "header length");
    if (len > (1ULL << 30)) throw IOFailure("checkpoint header length is implausible");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw IOFailure("checkpoint truncated in header");
    try {
        return Json::parse(text);
    } catch (const Json::exception& e) {
        throw IOFailure(std::string("checkpoint header is not JSON: ") + e.what());
    }
}

CheckpointHeader parse_header(const Json& j) {
    CheckpointHeader h;
    h.raw = j;
    try {
        if (j.at("schema_version").get<int>() != kCheckpointSchemaVersion)
            throw CheckpointMismatch("unsupported checkpoint schema_version");
        h.config = model_config_from_json(j.at("model"));
        h.step = j.at("step").get<long long>();
        h.optimizer_steps = j.value("optimizer_steps", 0LL);
    } catch (const Json::exception& e) {
        throw CheckpointMismatch(std::string("checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointMismatch(std::string("checkpoint config: ") + e.what());
    }
    return h;
}

std::map<std::string, Record> read_records(std::istream& in) {
    std::map<std::string, Record> out;
    const auto count = take<std::uint32_t>(in, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = take<std::uint32_t>(in, "tensor name");
        if (name_len > 4096) throw IOFailure("checkpoint tensor name too long");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) throw IOFailure("checkpoint truncated in tensor name");
        if (take<std::uint8_t>(in, name) != kDtypeF64) throw IOFailure("unsupported dtype for " + name);
        const auto rank = take<std::uint32_t>(in, name);
        if (rank > 8) throw IOFailure("implausible rank for " + name);
        Record r;
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = take<std::uint64_t>(in, name);
            if (d > (1ULL << 31)) throw IOFailure("implausible dimension for " + name);
            r.dims.push_back(static_cast<int>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n > (1ULL << 31)) throw IOFailure("implausible tensor size for " + name);
        r.data.resize(n);
        for (auto& v : r.data) v = take<double>(in, name);
        out.emplace(std::move(name), std::move(r));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RestorationModel& model, long long step,
                     const nn::Adam* optimizer, const Json& extra) {
    const auto& entries = model.params().entries();
    Json header{{"schema_version", kCheckpointSchemaVersion},
                {"model", to_json(model.config())},
                {"schedule",
                 {{"steps", model.config().schedule.steps},
                  {"beta_lo", model.config().schedule.beta_lo},
                  {"beta_hi", model.config().schedule.beta_hi}}},
                {"step", step},
                {"optimizer_steps", optimizer ? optimizer->steps_taken() : 0},
                {"extra", extra}};
    const std::string text = header.dump();

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IOFailure("cannot write " + tmp.string());
        out.write(kMagic, 4);
        put<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        const std::size_t n_tensors = entries.size() * (optimizer ? 3 : 1);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(n_tensors));
        for (const auto& p : entries) write_record(out, p.name, p.tensor.shape(), p.tensor.values());
        if (optimizer) {
            const nn::Adam& opt = *optimizer;
            for (std::size_t i = 0; i < entries.size(); ++i)
                write_record(out, "adam.m." + entries[i].name, entries[i].tensor.shape(), opt.first_moments()[i]);
            for (std::size_t i = 0; i < entries.size(); ++i)
                write_record(out, "adam.v." + entries[i].name, entries[i].tensor.shape(), opt.second_moments()[i]);
        }
        out.flush();
        if (!out) throw IOFailure("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IOFailure("cannot move checkpoint into place: " + ec.message());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read checkpoint " + path.string());
    return parse_header(read_header(in));
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, RestorationModel& model, nn::Adam* optimizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read checkpoint " + path.string());
    CheckpointHeader h = parse_header(read_header(in));
    if (to_json(h.config) != to_json(model.config()))
        throw CheckpointMismatch("checkpoint config differs from the model config");
    auto records = read_records(in);

    auto& entries = model.params().entries();
    auto fetch = [&](const std::string& name, const nn::Shape& shape) -> const Record& {
        const auto it = records.find(name);
        if (it == records.end()) throw CheckpointMismatch("checkpoint lacks tensor " + name);
        if (it->second.dims != shape) throw CheckpointMismatch("shape mismatch for tensor " + name);
        return it->second;
    };
    // Validate everything before touching the model.
    for (const auto& p : entries) fetch(p.name, p.tensor.shape());
    for (auto& p : entries) p.tensor.values() = fetch(p.name, p.tensor.shape()).data;

    if (optimizer) {
        const bool has_moments = records.count("adam.m." + entries.front().name) > 0;
        if (has_moments) {
            for (std::size_t i = 0; i < entries.size(); ++i) {
                optimizer->first_moments()[i] = fetch("adam.m." + entries[i].name, entries[i].tensor.shape()).data;
                optimizer->second_moments()[i] = fetch("adam.v." + entries[i].name, entries[i].tensor.shape()).data;
            }
            optimizer->set_steps_taken(h.optimizer_steps);
        }
    }
    return h;
}

std::unique_ptr<RestorationModel> load_model(const std::filesystem::path& path, CheckpointHeader* header) {
    const CheckpointHeader h = read_checkpoint_header(path);
    auto model = std::make_unique<RestorationModel>(h.config);
    CheckpointHeader loaded = load_checkpoint(path, *model);
    if (header) *header = std::move(loaded);
    return model;
}

}  // namespace glyphsr
