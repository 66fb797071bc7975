#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nbss {

using cplx = std::complex<double>;

// Raised for invalid inputs (bad shapes, degenerate signals, malformed
// files). The CLI maps it to exit code 1; anything else is internal.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Time-domain samples, channels x samples.
struct MultichannelWaveform {
    std::vector<std::vector<double>> channels;
    int sample_rate = 16000;

    MultichannelWaveform() = default;
    MultichannelWaveform(std::size_t n_channels, std::size_t n_samples, int fs = 16000)
        : channels(n_channels, std::vector<double>(n_samples, 0.0)), sample_rate(fs) {}

    std::size_t n_channels() const { return channels.size(); }
    std::size_t n_samples() const { return channels.empty() ? 0 : channels.front().size(); }

    void check_rectangular() const {
        for (const auto& c : channels)
            if (c.size() != n_samples()) throw Error("channels have unequal lengths");
    }
};

}  // namespace nbss
