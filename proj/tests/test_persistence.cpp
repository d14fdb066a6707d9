#include <doctest.h>

#include <fstream>

#include "glyphsr/checkpoint.hpp"
#include "glyphsr/config.hpp"
#include "glyphsr/errors.hpp"
#include "glyphsr/trainer.hpp"
#include "support.hpp"

using namespace glyphsr;

namespace {

std::vector<std::vector<double>> snapshot(const RestorationModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.params().entries()) out.push_back(p.tensor.values());
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig tiny_run() {
    RunConfig c;
    c.model = testing::tiny_model_config();
    c.train.batch_size = 2;
    c.train.log_every = 1;
    c.train.checkpoint_every = 2;
    c.train.smooth_window = 3;
    c.train.seed = 9;
    return c;
}

struct TinyData {
    testing::TempDir dir{"train"};
    std::filesystem::path manifest;
    TinyData() {
        DatasetSpec spec;
        spec.charset = U"AB7";
        spec.count = 4;
        spec.dup = 2;
        spec.max_len = 2;
        spec.line_height = 8;
        spec.line_width = 16;
        spec.seed = 1;
        manifest = build_dataset(spec, default_atlas(), dir.path() / "data").manifest;
    }
};

nn::Adam make_adam(RestorationModel& m, const RunConfig& c) {
    nn::AdamConfig a;
    a.lr = c.train.lr;
    a.clip_norm = c.train.clip_norm;
    return nn::Adam(m.params(), a);
}

}  // namespace

TEST_CASE("checkpoint round trip restores weights, moments and header") {
    testing::TempDir dir("ckpt");
    RestorationModel a(testing::tiny_model_config());
    testing::randomize(a.params(), 5);
    nn::Adam opt_a(a.params(), {});
    for (std::size_t i = 0; i < opt_a.first_moments().size(); ++i) {
        for (auto& v : opt_a.first_moments()[i]) v = 0.25 + i;
        for (auto& v : opt_a.second_moments()[i]) v = 0.5 + i;
    }
    opt_a.set_steps_taken(17);
    const auto path = dir / "m.tsr";
    save_checkpoint(path, a, 42, &opt_a, Json{{"note", "x"}});

    RestorationModel b(testing::tiny_model_config());
    nn::Adam opt_b(b.params(), {});
    const auto h = load_checkpoint(path, b, &opt_b);
    CHECK(h.step == 42);
    CHECK(h.optimizer_steps == 17);
    CHECK(h.raw["extra"]["note"] == "x");
    CHECK(snapshot(a) == snapshot(b));
    CHECK(opt_b.first_moments() == opt_a.first_moments());
    CHECK(opt_b.second_moments() == opt_a.second_moments());
    CHECK(opt_b.steps_taken() == 17);

    CheckpointHeader lh;
    const auto c = load_model(path, &lh);
    CHECK(to_json(c->config()) == to_json(a.config()));
    CHECK(snapshot(*c) == snapshot(a));
    CHECK(lh.step == 42);

    // Saving the reloaded model reproduces the file byte for byte.
    save_checkpoint(dir / "again.tsr", b, 42, &opt_b, Json{{"note", "x"}});
    CHECK(slurp(path) == slurp(dir / "again.tsr"));
}

TEST_CASE("checkpoint mismatches are reported and leave the model untouched") {
    testing::TempDir dir("ckpt_mismatch");
    RestorationModel a(testing::tiny_model_config());
    save_checkpoint(dir / "a.tsr", a, 0);

    auto other = testing::tiny_model_config();
    other.denoiser.base_channels = 6;
    RestorationModel b(other);
    testing::randomize(b.params(), 3);
    const auto before = snapshot(b);
    CHECK_THROWS_AS(load_checkpoint(dir / "a.tsr", b), CheckpointMismatch);
    CHECK(snapshot(b) == before);

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.tsr", b), IOFailure);
    {
        std::ofstream out(dir / "junk.tsr", std::ios::binary);
        out << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.tsr", b), IOFailure);
}

TEST_CASE("a checkpoint lacking a tensor is a mismatch") {
    testing::TempDir dir("ckpt_lack");
    RestorationModel a(testing::tiny_model_config());
    save_checkpoint(dir / "a.tsr", a, 0);
    // Rename the first tensor in place; lengths stay equal so the file still parses.
    std::string bytes = slurp(dir / "a.tsr");
    const std::string& first = a.params().entries().front().name;
    const auto pos = bytes.find(first, 12 + bytes.find("}"));
    REQUIRE(pos != std::string::npos);
    bytes[pos] = bytes[pos] == 'x' ? 'y' : 'x';
    {
        std::ofstream out(dir / "b.tsr", std::ios::binary);
        out << bytes;
    }
    RestorationModel b(testing::tiny_model_config());
    CHECK_THROWS_AS(load_checkpoint(dir / "b.tsr", b), CheckpointMismatch);
}

TEST_CASE("property: every truncation of a checkpoint fails to load") {
    testing::TempDir dir("ckpt_trunc");
    RestorationModel a(testing::tiny_model_config());
    save_checkpoint(dir / "a.tsr", a, 3);
    const std::string bytes = slurp(dir / "a.tsr");
    RestorationModel b(testing::tiny_model_config());
    KeyedRng rng{7, 7};
    for (int n = 0; n < 40; ++n) {
        const auto cut = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(bytes.size()) - 1));
        {
            std::ofstream out(dir / "t.tsr", std::ios::binary | std::ios::trunc);
            out.write(bytes.data(), static_cast<std::streamsize>(cut));
        }
        CHECK_THROWS_AS(load_checkpoint(dir / "t.tsr", b), Error);
    }
}

TEST_CASE("checkpoints are written beside the target and renamed") {
    testing::TempDir dir("ckpt_atomic");
    RestorationModel a(testing::tiny_model_config());
    save_checkpoint(dir / "a.tsr", a, 1);
    save_checkpoint(dir / "a.tsr", a, 2);
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
        ++files;
        CHECK(e.path().filename() == "a.tsr");
    }
    CHECK(files == 1);
    CHECK(read_checkpoint_header(dir / "a.tsr").step == 2);
    // A stale temp file from a crashed write does not affect the target.
    {
        std::ofstream out(dir / "a.tsr.tmp", std::ios::binary);
        out << "TSR1 partial";
    }
    CHECK(read_checkpoint_header(dir / "a.tsr").step == 2);
    save_checkpoint(dir / "a.tsr", a, 3);
    CHECK(!std::filesystem::exists(dir / "a.tsr.tmp"));
}

TEST_CASE("run config round trip and hash") {
    RunConfig c;
    c.train.batch_size = 7;
    c.guidance.omega = 0.5;
    c.data.degrade.noise_std = {0.0, 0.2};
    const Json j = to_json(c);
    const RunConfig back = run_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(config_hash(j) == config_hash(to_json(back)));
    CHECK(config_hash(j).size() == 16);
    Json k = j;
    k["train"]["batch_size"] = 8;
    CHECK(config_hash(k) != config_hash(j));

    testing::TempDir dir("cfg");
    save_run_config(dir / "c.json", c);
    CHECK(to_json(load_run_config(dir / "c.json")) == j);
}

TEST_CASE("fnv1a64 known vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("run config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(run_config_from_json(Json{{"schema_version", 1}, {"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json{{"train", {{"batchsize", 2}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json{{"model", {{"denoiser", {{"depth", 2}}}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json{{"schema_version", 2}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json{{"train", {{"lr", -1.0}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json{{"train", {{"batch_size", "four"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json{{"model", {{"denoiser", "huge"}}}}), ConfigError);
    // Missing keys keep defaults.
    CHECK(to_json(run_config_from_json(Json::object())) == to_json(RunConfig{}));
}

TEST_CASE("denoiser presets") {
    const auto desk = run_config_from_json(Json{{"model", {{"denoiser", "desk"}}}});
    CHECK(desk.model.denoiser.base_channels == 16);
    CHECK(desk.model.denoiser.height == 48);
    CHECK(desk.model.denoiser.width == 240);
    CHECK(desk.model.denoiser.channel_multipliers == std::vector<int>{1, 2, 4, 4});
    // The other presets need a matching text width, so only the model section is parsed.
    ModelConfig expect;
    expect.denoiser = DenoiserConfig::paper_scale();
    CHECK(to_json(model_config_from_json(Json{{"denoiser", "paper_scale"}})) == to_json(expect));
    expect.denoiser = DenoiserConfig::tiny();
    CHECK(to_json(model_config_from_json(Json{{"denoiser", "tiny"}})) == to_json(expect));
}

TEST_CASE("loss log helpers") {
    CHECK(trailing_mean({1, 2, 3, 4}, 3, 2) == 3.5);
    CHECK(trailing_mean({1, 2, 3, 4}, 1, 10) == 1.5);
    testing::TempDir dir("log");
    {
        std::ofstream out(dir / "l.jsonl");
        for (int s = 1; s <= 5; ++s) {
            LossEntry e;
            e.step = s;
            e.loss = s * 0.5;
            out << loss_entry_json(e) << '\n';
        }
    }
    CHECK(read_loss_log(dir / "l.jsonl").size() == 5);
    const auto part = read_loss_log(dir / "l.jsonl", 3);
    REQUIRE(part.size() == 3);
    CHECK(part.back().loss == 1.5);
    CHECK(read_loss_log(dir / "none.jsonl").empty());
}

TEST_CASE("resumed training matches an uninterrupted run and the log has no gaps") {
    TinyData data;
    const RunConfig cfg = tiny_run();
    const TrainingSet set(data.manifest, 8, 16);
    REQUIRE(set.size() == 8);

    RestorationModel straight(cfg.model);
    auto opt_s = make_adam(straight, cfg);
    TrainOptions o;
    o.end_step = 6;
    o.checkpoint = data.dir / "s.tsr";
    o.loss_log = data.dir / "s.jsonl";
    const auto rs = train(cfg, set, straight, opt_s, o);
    CHECK(rs.final_step == 6);

    RestorationModel first(cfg.model);
    auto opt_f = make_adam(first, cfg);
    o.end_step = 3;
    o.checkpoint = data.dir / "r.tsr";
    o.loss_log = data.dir / "r.jsonl";
    train(cfg, set, first, opt_f, o);

    RestorationModel resumed(cfg.model);
    auto opt_r = make_adam(resumed, cfg);
    const auto h = load_checkpoint(o.checkpoint, resumed, &opt_r);
    CHECK(h.step == 3);
    o.start_step = h.step;
    o.end_step = 6;
    const auto rr = train(cfg, set, resumed, opt_r, o);

    CHECK(snapshot(resumed) == snapshot(straight));
    const auto log = read_loss_log(o.loss_log);
    REQUIRE(log.size() == 6);
    REQUIRE(rr.log.size() == 6);
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(log[i].step == static_cast<long long>(i) + 1);
        CHECK(log[i].loss == rs.log[i].loss);
        CHECK(log[i].smoothed == doctest::Approx(rs.log[i].smoothed).epsilon(1e-12));
    }
    CHECK(read_checkpoint_header(o.checkpoint).step == 6);
}

TEST_CASE("resuming from an earlier step drops stale log lines") {
    TinyData data;
    const RunConfig cfg = tiny_run();
    const TrainingSet set(data.manifest, 8, 16);
    RestorationModel m(cfg.model);
    auto opt = make_adam(m, cfg);
    TrainOptions o;
    o.end_step = 4;
    o.checkpoint = data.dir / "a.tsr";
    o.loss_log = data.dir / "a.jsonl";
    train(cfg, set, m, opt, o);
    // Pretend the run crashed after step 2's checkpoint but logged up to 4.
    RestorationModel m2(cfg.model);
    auto opt2 = make_adam(m2, cfg);
    o.start_step = 2;
    o.end_step = 3;
    train(cfg, set, m2, opt2, o);
    const auto log = read_loss_log(o.loss_log);
    REQUIRE(log.size() == 3);
    CHECK(log.back().step == 3);
}

TEST_CASE("a non-finite loss reloads the last checkpoint and retries once") {
    TinyData data;
    const RunConfig cfg = tiny_run();
    const TrainingSet set(data.manifest, 8, 16);
    RestorationModel m(cfg.model);
    auto opt = make_adam(m, cfg);
    TrainOptions o;
    o.end_step = 5;
    o.checkpoint = data.dir / "n.tsr";
    o.loss_log = data.dir / "n.jsonl";
    bool poisoned = false;
    // Corrupt the weights after step 3; the checkpoint from step 2 is clean.
    o.on_log = [&](const LossEntry& e) {
        if (e.step == 3 && !poisoned) {
            poisoned = true;
            for (auto& p : m.params().entries()) p.tensor.values()[0] = std::nan("");
        }
    };
    const auto r = train(cfg, set, m, opt, o);
    CHECK(poisoned);
    CHECK(r.retries == 1);
    CHECK(r.final_step == 5);
    const auto log = read_loss_log(o.loss_log);
    REQUIRE(log.size() == 5);
    for (std::size_t i = 0; i < log.size(); ++i) {
        CHECK(log[i].step == static_cast<long long>(i) + 1);
        CHECK(std::isfinite(log[i].loss));
    }
}

TEST_CASE("a persistent non-finite loss propagates after one retry") {
    TinyData data;
    const RunConfig cfg = tiny_run();
    const TrainingSet set(data.manifest, 8, 16);
    RestorationModel m(cfg.model);
    for (auto& p : m.params().entries()) p.tensor.values()[0] = std::nan("");
    auto opt = make_adam(m, cfg);
    TrainOptions o;
    o.end_step = 3;
    o.checkpoint = data.dir / "p.tsr";
    o.loss_log = data.dir / "p.jsonl";
    CHECK_THROWS_AS(train(cfg, set, m, opt, o), NonFiniteLoss);
}
