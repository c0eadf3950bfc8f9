#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rosdhb {

// Dense d-dimensional carrier for models, gradients and momentums.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Base class for all structured errors thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct BreakdownError : Error {
    using Error::Error;
};
struct DivergenceError : Error {
    int round = 0;
    DivergenceError(const std::string& msg, int t) : Error(msg), round(t) {}
};
struct ParseError : Error {
    using Error::Error;
};

/// Counter-based deterministic RNG stream. A stream is identified by
/// (seed, stream_id); draws are a pure function of that pair and the draw
/// counter, so per-worker / per-round streams replay identically no matter
/// in which order they are consumed.
class RngStream {
  public:
    RngStream() = default;
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_id_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    /// Derive a child stream from a text label. Same (seed, stream_id, label)
    /// always yields the same child.
    RngStream derive(std::string_view label) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();

    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t uniform_int(std::uint64_t bound);

    /// Standard normal via Box-Muller.
    double normal();

  private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t counter_ = 0;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// a*x + y. Inputs are unmodified; dimensions must agree.
Vector axpy(double a, const Vector& x, const Vector& y);

/// Squared Euclidean norm.
double squared_norm(const Vector& x);

/// Throws Error if any entry is NaN or infinite.
void check_finite(const Vector& x, std::string_view what);

} // namespace rosdhb
