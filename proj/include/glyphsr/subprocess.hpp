#pragma once

#include <string>

namespace glyphsr {

// Runs `command` through /bin/sh and trades one request line for one reply line. The
// child stays alive across calls. Shared by the OCR and background-upscaler plug-ins.
class LineProcess {
public:
    explicit LineProcess(std::string command);
    ~LineProcess();
    LineProcess(const LineProcess&) = delete;
    LineProcess& operator=(const LineProcess&) = delete;

    std::string exchange(const std::string& request);

private:
    std::string command_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string pending_;
};

}  // namespace glyphsr
