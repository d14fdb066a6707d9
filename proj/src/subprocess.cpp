#include "glyphsr/subprocess.hpp"

#include <chrono>
#include <csignal>
#include <cstring>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "glyphsr/errors.hpp"

namespace glyphsr {

namespace {

void ignore_sigpipe() {
    static const bool done = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)done;
}

}  // namespace

LineProcess::LineProcess(std::string command) : command_(std::move(command)) {
    ignore_sigpipe();
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw IOFailure("pipe: " + std::string(std::strerror(errno)));
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw IOFailure("pipe: " + std::string(std::strerror(errno)));
    }
    pid_ = fork();
    if (pid_ < 0) throw IOFailure("fork: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
}

LineProcess::~LineProcess() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (pid_ <= 0) return;
    // Closing stdin is the polite stop; escalate if the child ignores it.
    for (int i = 0; i < 50; ++i) {
        if (waitpid(pid_, nullptr, WNOHANG) == pid_) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
}

std::string LineProcess::exchange(const std::string& request) {
    if (request.find('\n') != std::string::npos) throw IOFailure("plug-in request must be a single line");
    const std::string msg = request + "\n";
    std::size_t sent = 0;
    while (sent < msg.size()) {
        const ssize_t n = write(to_child_, msg.data() + sent, msg.size() - sent);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw IOFailure("plug-in '" + command_ + "' stopped reading: " + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
    for (;;) {
        const auto nl = pending_.find('\n');
        if (nl != std::string::npos) {
            std::string line = pending_.substr(0, nl);
            pending_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        char buf[4096];
        const ssize_t n = read(from_child_, buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw IOFailure("plug-in '" + command_ + "' closed its output");
        pending_.append(buf, static_cast<std::size_t>(n));
    }
}

}  // namespace glyphsr
