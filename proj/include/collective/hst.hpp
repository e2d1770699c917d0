#pragma once

// Multi-order scattering with an arcsine activation: analytic Gabor filter
// bank, Wick-ordered paths (strictly coarser scales), low-pass or global
// pooling, and PCA over coefficient ensembles.

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>

#include "collective/phase_space.hpp"

namespace collective {

using cvec = std::vector<std::complex<double>>;

/// zeta = i ln R0(z) = asin(2z/pi), with real arguments beyond +-1 taken as
/// the limit from the upper half-plane (Im zeta >= 0 there).
inline std::complex<double> activation(std::complex<double> z) {
    const std::complex<double> w = 2.0 * z / std::numbers::pi;
    // +0 imaginary part selects the upper-half-plane limit on the cuts
    const std::complex<double> arg(w.real(), w.imag() == 0.0 ? 0.0 : w.imag());
    return std::asin(arg);
}

/// activation(c z) - activation(z); tends to i ln c for |z| >> pi/2.
inline std::complex<double> amplitude_shift_check(std::complex<double> z, double c) {
    if (!(c > 0.0)) throw ConfigError("amplitude_shift_check: c must be > 0");
    if (c == 1.0) return {0.0, 0.0};
    return activation(c * z) - activation(z);
}

struct ComplexSignal {
    cvec samples;
    double spacing = 1.0;

    void validate() const {
        const std::size_t n = samples.size();
        if (n < 8 || (n & (n - 1)) != 0) throw ConfigError("signal length must be a power of two >= 8");
        for (const auto& v : samples)
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw ConfigError("signal has non-finite samples");
        if (!(spacing > 0.0)) throw ConfigError("signal spacing must be > 0");
    }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// Forward/backward complex FFT of one length; planning is serialized since
/// the FFTW planner is not thread-safe, execution is not.
class FFT {
public:
    explicit FFT(std::size_t n) : n_(n) {
        cvec a(n), b(n);
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fwd_ = fftw_plan_dft_1d(static_cast<int>(n), ptr(a), ptr(b), FFTW_FORWARD, flags);
        bwd_ = fftw_plan_dft_1d(static_cast<int>(n), ptr(a), ptr(b), FFTW_BACKWARD, flags);
    }
    ~FFT() {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }
    FFT(const FFT&) = delete;
    FFT& operator=(const FFT&) = delete;

    cvec forward(const cvec& x) const {
        cvec in = x, out(n_);
        fftw_execute_dft(fwd_, ptr(in), ptr(out));
        return out;
    }
    /// Inverse including the 1/n factor.
    cvec backward(const cvec& X) const {
        cvec in = X, out(n_);
        fftw_execute_dft(bwd_, ptr(in), ptr(out));
        for (auto& v : out) v /= static_cast<double>(n_);
        return out;
    }

private:
    static fftw_complex* ptr(cvec& v) { return reinterpret_cast<fftw_complex*>(v.data()); }
    std::size_t n_;
    fftw_plan fwd_{}, bwd_{};
};

/// Angular frequency of FFT bin k in radians per sample, in (-pi, pi].
inline double bin_frequency(std::size_t k, std::size_t n) {
    const double kk = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
    return 2.0 * std::numbers::pi * kk / static_cast<double>(n);
}

}  // namespace detail

/// Transfer functions sampled on the FFT grid (radians per sample).
struct FilterBank {
    std::size_t N = 0;
    int J = 0;
    double xi0 = 0.75 * std::numbers::pi;
    double sigma = 0.5;  ///< bandwidth relative to center frequency
    double lp_scale = 1.0;
    std::vector<std::vector<double>> psi_hat;  ///< j = 0..J-1, center xi0 / 2^j
    std::vector<double> phi_hat;

    double center(int j) const { return xi0 / std::ldexp(1.0, j); }

    /// sum_j |psi_j|^2 + |phi|^2 at each bin
    std::vector<double> littlewood_paley() const {
        std::vector<double> lp(N, 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            lp[k] = phi_hat[k] * phi_hat[k];
            for (const auto& p : psi_hat) lp[k] += p[k] * p[k];
        }
        return lp;
    }
};

/// Gabor wavelets psi_j(w) = exp(-(w - xi_j)^2 / (2 (sigma xi_j)^2)) kept on
/// w > 0 only, with the DC bin removed; phi is a Gaussian low-pass of width
/// xi0 / 2^J. The bank is scaled so the Littlewood-Paley sum peaks at 1 on
/// [0, xi0].
inline FilterBank build_filterbank(std::size_t N, int J, double xi0 = 0.75 * std::numbers::pi, double sigma = 0.5) {
    if (N < 8 || (N & (N - 1)) != 0) throw ConfigError("build_filterbank: N must be a power of two >= 8");
    if (J < 1) throw ConfigError("build_filterbank: J must be >= 1");
    if (std::ldexp(1.0, J) > static_cast<double>(N) / 4.0) throw ConfigError("build_filterbank: 2^J must be <= N/4");
    if (!(xi0 > 0.0) || !(xi0 < std::numbers::pi)) throw ConfigError("build_filterbank: xi0 must lie in (0, pi)");
    if (!(sigma > 0.0)) throw ConfigError("build_filterbank: sigma must be > 0");

    FilterBank b;
    b.N = N;
    b.J = J;
    b.xi0 = xi0;
    b.sigma = sigma;
    b.psi_hat.assign(J, std::vector<double>(N, 0.0));
    b.phi_hat.assign(N, 0.0);
    const double s_phi = xi0 / std::ldexp(1.0, J);
    for (std::size_t k = 0; k < N; ++k) {
        const double w = detail::bin_frequency(k, N);
        b.phi_hat[k] = std::exp(-w * w / (2.0 * s_phi * s_phi));
        if (k == 0 || w <= 0.0) continue;
        for (int j = 0; j < J; ++j) {
            const double xi = b.center(j), s = sigma * xi;
            b.psi_hat[j][k] = std::exp(-(w - xi) * (w - xi) / (2.0 * s * s));
        }
    }
    double lp_max = 0.0;
    const auto lp = b.littlewood_paley();
    for (std::size_t k = 0; k < N; ++k) {
        const double w = detail::bin_frequency(k, N);
        if (w >= 0.0 && w <= xi0) lp_max = std::max(lp_max, lp[k]);
    }
    b.lp_scale = 1.0 / std::sqrt(lp_max);
    for (auto& p : b.psi_hat)
        for (auto& v : p) v *= b.lp_scale;
    for (auto& v : b.phi_hat) v *= b.lp_scale;
    return b;
}

struct ScatteringPath {
    std::vector<int> scales;  ///< j_1 < j_2 < ... (each step moves to a coarser scale)

    int order() const { return static_cast<int>(scales.size()); }
    std::string label() const {
        if (scales.empty()) return "()";
        std::string s;
        for (std::size_t i = 0; i < scales.size(); ++i) s += (i ? "-" : "") + std::to_string(scales[i]);
        return s;
    }
    bool operator==(const ScatteringPath&) const = default;
};

/// Every Wick-admissible path of order 0..m_max over J scales, ordered by
/// order then lexicographically.
inline std::vector<ScatteringPath> wick_paths(int J, int m_max) {
    std::vector<ScatteringPath> out{ScatteringPath{}};
    std::vector<ScatteringPath> frontier{ScatteringPath{}};
    for (int m = 1; m <= m_max; ++m) {
        std::vector<ScatteringPath> next;
        for (const auto& p : frontier)
            for (int j = p.scales.empty() ? 0 : p.scales.back() + 1; j < J; ++j) {
                ScatteringPath c = p;
                c.scales.push_back(j);
                next.push_back(c);
            }
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

enum class Pooling { lowpass, global_mean };

struct HSTOptions {
    bool normalize = true;         ///< rescale so max|f| = 0.99 pi/2
    Pooling pooling = Pooling::lowpass;
    bool keep_fields = false;      ///< keep the unpooled field of every path
};

struct HSTCoefficients {
    std::vector<ScatteringPath> paths;
    std::vector<cvec> values;  ///< pooled, per path, per window position
    std::vector<cvec> fields;  ///< unpooled, only with keep_fields
    double normalization = 1.0;
    bool range_warning = false;  ///< input exceeded pi/2 without normalization
    int m_max = 0;
    Pooling pooling = Pooling::lowpass;

    std::size_t windows() const { return values.empty() ? 0 : values.front().size(); }
};

/// Order 0 pools activation(f); order m applies psi_{j_m} then the activation
/// to the order m-1 field of the parent path, and pools with phi. All
/// convolutions are circular.
inline HSTCoefficients hst_forward(const ComplexSignal& f, const FilterBank& bank, int m_max,
                                   const HSTOptions& opt = {}) {
    f.validate();
    if (f.samples.size() != bank.N) throw ConfigError("hst_forward: signal length does not match the filter bank");
    if (m_max < 0 || m_max > bank.J) throw ConfigError("hst_forward: m_max must lie in 0..J");
    const std::size_t N = bank.N;
    const detail::FFT fft(N);

    HSTCoefficients out;
    out.m_max = m_max;
    out.pooling = opt.pooling;
    out.paths = wick_paths(bank.J, m_max);

    double peak = 0.0;
    for (const auto& v : f.samples) peak = std::max(peak, std::abs(v));
    if (opt.normalize && peak > 0.0) out.normalization = 0.99 * (0.5 * std::numbers::pi) / peak;
    if (!opt.normalize && peak > 0.5 * std::numbers::pi) out.range_warning = true;

    const std::size_t stride = static_cast<std::size_t>(1) << bank.J;
    auto pool = [&](const cvec& u) {
        if (opt.pooling == Pooling::global_mean) {
            std::complex<double> s = 0.0;
            for (const auto& v : u) s += v;
            return cvec{s / static_cast<double>(N)};
        }
        cvec U = fft.forward(u);
        for (std::size_t k = 0; k < N; ++k) U[k] *= bank.phi_hat[k];
        const cvec low = fft.backward(U);
        cvec w;
        for (std::size_t i = 0; i < N; i += stride) w.push_back(low[i]);
        return w;
    };
    auto wavelet = [&](const cvec& u, int j) {
        // a constant offset is annihilated by psi anyway; removing it first
        // makes psi * const exactly zero rather than FFT roundoff
        cvec centered(N);
        for (std::size_t i = 0; i < N; ++i) centered[i] = u[i] - u[0];
        cvec U = fft.forward(centered);
        for (std::size_t k = 0; k < N; ++k) U[k] *= bank.psi_hat[j][k];
        cvec y = fft.backward(U);
        for (auto& v : y) v = activation(v);
        return y;
    };

    std::vector<cvec> field(out.paths.size());
    field[0].resize(N);
    for (std::size_t i = 0; i < N; ++i) field[0][i] = activation(out.normalization * f.samples[i]);
    for (std::size_t p = 1; p < out.paths.size(); ++p) {
        ScatteringPath parent = out.paths[p];
        const int j = parent.scales.back();
        parent.scales.pop_back();
        const auto it = std::find(out.paths.begin(), out.paths.end(), parent);
        field[p] = wavelet(field[static_cast<std::size_t>(it - out.paths.begin())], j);
    }
    out.values.reserve(field.size());
    for (const auto& u : field) out.values.push_back(pool(u));
    if (opt.keep_fields) out.fields = std::move(field);
    return out;
}

/// Sum over windows of |S|^2 for each order-1 path, taken on the unpooled
/// fields (needs keep_fields). Index j.
inline std::vector<double> order1_energy(const HSTCoefficients& c) {
    if (c.fields.empty()) throw ConfigError("order1_energy: coefficients were computed without keep_fields");
    std::vector<double> e;
    for (std::size_t p = 0; p < c.paths.size(); ++p)
        if (c.paths[p].order() == 1) {
            double s = 0.0;
            for (const auto& v : c.fields[p]) s += std::norm(v);
            e.push_back(s);
        }
    return e;
}

struct PCAResult {
    std::vector<double> singular_values;  ///< decreasing
    Eigen::MatrixXcd components;          ///< one unit-norm component per column
    std::vector<double> explained;        ///< variance fraction per component

    int count_above(double threshold) const {
        return static_cast<int>(std::count_if(singular_values.begin(), singular_values.end(),
                                              [&](double s) { return s > threshold; }));
    }
};

/// Mean-centred PCA of the flattened pooled coefficients (complex SVD).
inline PCAResult pca_spectra(const std::vector<HSTCoefficients>& sets) {
    if (sets.size() < 2) throw ConfigError("pca_spectra: need at least 2 coefficient sets");
    const auto& ref = sets.front();
    for (const auto& s : sets) {
        if (s.paths != ref.paths || s.values.size() != ref.values.size())
            throw ConfigError("pca_spectra: mismatched path structure");
        for (std::size_t p = 0; p < s.values.size(); ++p)
            if (s.values[p].size() != ref.values[p].size()) throw ConfigError("pca_spectra: mismatched window count");
    }
    std::size_t dim = 0;
    for (const auto& v : ref.values) dim += v.size();
    const Eigen::Index rows = static_cast<Eigen::Index>(sets.size());
    Eigen::MatrixXcd X(rows, static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < rows; ++r) {
        Eigen::Index c = 0;
        for (const auto& v : sets[static_cast<std::size_t>(r)].values)
            for (const auto& z : v) X(r, c++) = z;
    }
    const Eigen::RowVectorXcd mean = X.colwise().mean();
    X.rowwise() -= mean;
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(X, Eigen::ComputeThinV);
    PCAResult out;
    const auto& s = svd.singularValues();
    out.components = svd.matrixV();
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) total += s[i] * s[i];
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        out.singular_values.push_back(s[i]);
        out.explained.push_back(total > 0.0 ? s[i] * s[i] / total : 0.0);
    }
    return out;
}

/// `order,path,window_index,re,im`; path is the index into c.paths.
inline void write_hst_csv(std::ostream& os, const HSTCoefficients& c) {
    os << "order,path,window_index,re,im\n" << std::setprecision(17);
    for (std::size_t p = 0; p < c.paths.size(); ++p)
        for (std::size_t w = 0; w < c.values[p].size(); ++w)
            os << c.paths[p].order() << ',' << p << ',' << w << ',' << c.values[p][w].real() << ','
               << c.values[p][w].imag() << '\n';
}

}  // namespace collective
