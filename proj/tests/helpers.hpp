#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cpmt/config.hpp"
#include "cpmt/rng.hpp"
#include "cpmt/tensor.hpp"

namespace testutil {

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("cpmt_test_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path_.string(); }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline cpmt::Tensor randn(cpmt::Shape shape, cpmt::Rng& rng, double scale = 1.0, bool requires_grad = false) {
    std::vector<double> v(cpmt::shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, scale);
    return cpmt::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// The small configuration used throughout the model tests.
inline cpmt::CPMTConfig tiny_config() {
    cpmt::CPMTConfig c;
    c.d_model = 8;
    c.num_heads = 2;
    c.crossmodal_layers = 1;
    c.cpa_layers = 1;
    c.k_slots = 4;
    c.K_segments = 2;
    c.behavior_dim = 8;
    c.input_dims = {{cpmt::Modality::audio, 3}, {cpmt::Modality::video, 4}};
    c.embedding_buckets = 32;
    c.seed = 3;
    return c;
}

}  // namespace testutil
