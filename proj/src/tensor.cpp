#include "malt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "malt/errors.hpp"

namespace malt {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Tensor& t) { return {t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
MutMap as_matrix(Tensor& t) { return {t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }

std::size_t product(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.empty()) return 1;
    return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.empty()) return 1;
    return shape_.back();
}

double Tensor::item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;  // equal infinities
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return std::sqrt(s);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out({a.rows(), b.cols()});
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    Tensor out({a.rows(), b.rows()});
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: inner dimensions disagree, " + shape_str(a.shape()) + "^T x " +
                             shape_str(b.shape()));
    }
    Tensor out({a.cols(), b.cols()});
    as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    Tensor out(a.shape());
    const std::size_t n = a.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto in = a.row(r);
        auto o = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        if (!std::isfinite(mx)) {
            throw InvalidMaskError("softmax_rows: row " + std::to_string(r) + " has no finite entry");
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.cols();
    if (d == 0) throw DimensionError("layer_norm: empty feature dimension");
    if (gain.size() != d || bias.size() != d) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                             " do not match input " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= double(d);
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= double(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - mean) * inv * gain[j] + bias[j];
    }
    return out;
}

Tensor topk_mask(const Tensor& a, std::size_t k) {
    if (k < 1) throw ConfigError("topk_mask: k must be >= 1");
    const std::size_t n = a.cols();
    if (k >= n) return a;
    Tensor out = a;
    std::vector<double> scratch(n);
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto in = a.row(r);
        std::copy(in.begin(), in.end(), scratch.begin());
        std::nth_element(scratch.begin(), scratch.begin() + std::ptrdiff_t(k - 1), scratch.end(), std::greater<>());
        const double threshold = scratch[k - 1];
        auto o = out.row(r);
        for (std::size_t j = 0; j < n; ++j) {
            if (in[j] < threshold) o[j] = neg_inf;
        }
    }
    return out;
}

std::uint64_t Rng::next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw ContractError("Rng::below(0)");
    return std::size_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

std::size_t Rng::range(std::size_t lo, std::size_t hi) {
    if (hi < lo) throw ContractError("Rng::range: hi < lo");
    return lo + below(hi - lo + 1);
}

Tensor random_normal(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, stddev);
    return t;
}

}  // namespace malt
