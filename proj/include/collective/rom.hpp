#pragma once

// Reduced-order model: encoder (p, q) -> (P, cos Q, sin Q), an energy network
// E(P) whose slope sets omega_Q, a rotation propagator Q -> Q + omega_Q tau,
// and a decoder back to (p, q). ReLU MLPs with hand-written backprop over a
// flat parameter vector; Adam training.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "collective/dynamics.hpp"
#include "collective/equilibria.hpp"
#include "collective/parallel.hpp"

namespace collective {

struct ROMLayout {
    std::vector<int> encoder{2, 64, 64, 3};
    std::vector<int> energy{1, 64, 64, 1};
    std::vector<int> decoder{3, 64, 64, 2};
    /// Q = polar angle of the normalized input (p, q) plus the angle of the
    /// encoder's (c, s) pair, which starts near (1, 0). Orbits around the data
    /// mean then start with winding number 1 whatever their size.
    bool polar_angle = true;

    void validate() const {
        auto check = [](const std::vector<int>& s, int in, int out, const char* name) {
            if (s.size() < 2) throw ConfigError(std::string("rom: ") + name + " needs at least two layer sizes");
            if (s.front() != in || s.back() != out)
                throw ConfigError(std::string("rom: ") + name + " must map " + std::to_string(in) + " -> " +
                                  std::to_string(out));
            for (int v : s)
                if (v < 1) throw ConfigError(std::string("rom: ") + name + " has an empty layer");
        };
        check(encoder, 2, 3, "encoder (bottleneck must be 3: P, cos Q, sin Q)");
        check(energy, 1, 1, "energy network");
        check(decoder, 3, 2, "decoder");
    }
};

namespace detail {

inline std::size_t mlp_param_count(const std::vector<int>& s) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < s.size(); ++l) n += static_cast<std::size_t>(s[l + 1]) * (s[l] + 1);
    return n;
}

struct MLPCache {
    std::vector<Eigen::MatrixXd> act;  ///< act[0] = input, act[l] = output of layer l (post-ReLU for hidden)
    std::vector<Eigen::MatrixXd> pre;  ///< pre-activations per layer
};

/// Columns are samples. Weights are stored per layer as W (out x in,
/// column-major) followed by b (out).
inline Eigen::MatrixXd mlp_forward(const double* theta, const std::vector<int>& s, const Eigen::MatrixXd& x,
                                   MLPCache* cache = nullptr) {
    Eigen::MatrixXd a = x;
    if (cache) {
        cache->act.assign(1, x);
        cache->pre.clear();
    }
    const std::size_t L = s.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
        Eigen::Map<const Eigen::MatrixXd> W(theta, s[l + 1], s[l]);
        theta += static_cast<std::size_t>(s[l + 1]) * s[l];
        Eigen::Map<const Eigen::VectorXd> b(theta, s[l + 1]);
        theta += s[l + 1];
        Eigen::MatrixXd z = W * a;
        z.colwise() += b;
        if (cache) cache->pre.push_back(z);
        a = l + 1 < L ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
        if (cache) cache->act.push_back(a);
    }
    return a;
}

/// Accumulates dL/dtheta into grad and returns dL/dx.
inline Eigen::MatrixXd mlp_backward(const double* theta, double* grad, const std::vector<int>& s, const MLPCache& c,
                                    Eigen::MatrixXd dy) {
    const std::size_t L = s.size() - 1;
    std::vector<std::size_t> off(L);
    std::size_t o = 0;
    for (std::size_t l = 0; l < L; ++l) {
        off[l] = o;
        o += static_cast<std::size_t>(s[l + 1]) * (s[l] + 1);
    }
    for (std::size_t l = L; l-- > 0;) {
        if (l + 1 < L) dy = dy.cwiseProduct((c.pre[l].array() > 0.0).cast<double>().matrix());
        Eigen::Map<const Eigen::MatrixXd> W(theta + off[l], s[l + 1], s[l]);
        Eigen::Map<Eigen::MatrixXd> gW(grad + off[l], s[l + 1], s[l]);
        Eigen::Map<Eigen::VectorXd> gb(grad + off[l] + static_cast<std::size_t>(s[l + 1]) * s[l], s[l + 1]);
        gW.noalias() += dy * c.act[l].transpose();
        gb += dy.rowwise().sum();
        dy = W.transpose() * dy;
    }
    return dy;
}

}  // namespace detail

struct ROMParams {
    ROMLayout layout;
    std::vector<double> theta;
    std::uint64_t seed = 0;
    std::array<double, 2> mean{0.0, 0.0};   ///< of (p, q)
    std::array<double, 2> scale{1.0, 1.0};

    std::size_t encoder_offset() const { return 0; }
    std::size_t energy_offset() const { return detail::mlp_param_count(layout.encoder); }
    std::size_t decoder_offset() const { return energy_offset() + detail::mlp_param_count(layout.energy); }
    std::size_t size() const { return decoder_offset() + detail::mlp_param_count(layout.decoder); }
};

/// He-normal weights, zero biases, except the P output bias which starts at 1
/// so that P stays away from zero (fixes the additive gauge of P).
inline ROMParams rom_init(const ROMLayout& layout, std::uint64_t seed) {
    layout.validate();
    ROMParams r;
    r.layout = layout;
    r.seed = seed;
    r.theta.assign(r.size(), 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](const std::vector<int>& s, std::size_t off) {
        for (std::size_t l = 0; l + 1 < s.size(); ++l) {
            const std::size_t nw = static_cast<std::size_t>(s[l + 1]) * s[l];
            const double sd = std::sqrt(2.0 / s[l]);
            for (std::size_t k = 0; k < nw; ++k) r.theta[off + k] = sd * normal(rng);
            off += nw + s[l + 1];
        }
        return off;
    };
    fill(layout.encoder, r.encoder_offset());
    if (layout.polar_angle) {
        // (c, s) starts close to (1, 0)
        const auto& e = layout.encoder;
        const int in = e[e.size() - 2];
        const std::size_t w0 = r.energy_offset() - 3 - static_cast<std::size_t>(3 * in);
        for (int k = 0; k < in; ++k) {
            r.theta[w0 + static_cast<std::size_t>(3 * k) + 1] *= 0.1;
            r.theta[w0 + static_cast<std::size_t>(3 * k) + 2] *= 0.1;
        }
        r.theta[r.energy_offset() - 2] = 1.0;
    }
    fill(layout.energy, r.energy_offset());
    fill(layout.decoder, r.decoder_offset());
    r.theta[r.energy_offset() - 3] = 1.0;  // bias of the P output
    {
        // spread the first-layer kinks of E(P) over P in [-5, 5]; with zero
        // biases every kink sits at P = 0 and omega = dE/dP is piecewise
        // constant on two pieces only (bias gradients of omega vanish)
        const int h = layout.energy[1];
        const std::size_t off = r.energy_offset();
        for (int k = 0; k < h; ++k) {
            const double c = -5.0 + 10.0 * (k + 0.5) / h;
            r.theta[off + static_cast<std::size_t>(h + k)] = -r.theta[off + static_cast<std::size_t>(k)] * c;
        }
    }
    return r;
}

/// Exact reparametrization P -> P + shift: folded into the encoder's P bias
/// and the first-layer biases of the energy network and the decoder, so every
/// prediction is unchanged. (A sign flip is not a gauge: it would reverse Q.)
inline void rom_regauge(ROMParams& rp, double shift) {
    auto& th = rp.theta;
    th[rp.energy_offset() - 3] += shift;
    const int he = rp.layout.energy[1];
    const std::size_t eo = rp.energy_offset();
    for (int k = 0; k < he; ++k) th[eo + static_cast<std::size_t>(he + k)] -= th[eo + static_cast<std::size_t>(k)] * shift;
    // column 0 of the decoder's first weight matrix multiplies P
    const int hd = rp.layout.decoder[1];
    const std::size_t dof = rp.decoder_offset();
    for (int k = 0; k < hd; ++k)
        th[dof + static_cast<std::size_t>(3 * hd + k)] -= th[dof + static_cast<std::size_t>(k)] * shift;
}

struct TrainingPair {
    PhaseState s;
    PhaseState target;
    double tau = 0.0;
};

struct LossParts {
    double recon = 0.0;
    double pred = 0.0;
    double total = 0.0;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double final_learning_rate = 1e-4;  ///< exponential decay target at the last epoch
    int batch_size = 64;
    int epochs = 2000;
    double w_recon = 1.0;
    double w_pred = 1.0;
    std::vector<double> taus{0.5, 1.0, 2.0, 4.0};
    int pairs_per_trajectory = 4;  ///< drawn afresh every epoch
    int restarts = 3;              ///< independent runs; the lowest training loss is kept
    std::uint64_t seed = 7;
    int threads = 1;

    void validate() const {
        if (!(learning_rate > 0.0) || !(final_learning_rate > 0.0)) throw ConfigError("rom: learning rates must be > 0");
        if (batch_size < 1 || epochs < 1 || pairs_per_trajectory < 1) throw ConfigError("rom: sizes must be positive");
        if (!(w_recon > 0.0) || !(w_pred > 0.0)) throw ConfigError("rom: loss weights must be > 0");
        if (taus.empty()) throw ConfigError("rom: tau list must not be empty");
        for (double t : taus)
            if (!(t > 0.0)) throw ConfigError("rom: tau offsets must be > 0");
        if (threads < 1) throw ConfigError("rom: threads must be >= 1");
        if (restarts < 1) throw ConfigError("rom: restarts must be >= 1");
    }
};

inline constexpr double kOmegaStep = 1e-4;

namespace detail {

struct ROMBatch {
    Eigen::MatrixXd x;       ///< 2 x B, normalized (p, q)
    Eigen::MatrixXd s;       ///< 2 x B, physical
    Eigen::MatrixXd y;       ///< 2 x B, physical targets
    Eigen::RowVectorXd tau;
};

inline ROMBatch make_batch(const ROMParams& r, const std::vector<TrainingPair>& pairs, std::size_t begin,
                           std::size_t end) {
    const Eigen::Index B = static_cast<Eigen::Index>(end - begin);
    ROMBatch b{Eigen::MatrixXd(2, B), Eigen::MatrixXd(2, B), Eigen::MatrixXd(2, B), Eigen::RowVectorXd(B)};
    for (Eigen::Index k = 0; k < B; ++k) {
        const auto& pr = pairs[begin + static_cast<std::size_t>(k)];
        b.s(0, k) = pr.s.p;
        b.s(1, k) = pr.s.q;
        b.y(0, k) = pr.target.p;
        b.y(1, k) = pr.target.q;
        b.tau(k) = pr.tau;
        for (int i = 0; i < 2; ++i) b.x(i, k) = (b.s(i, k) - r.mean[i]) / r.scale[i];
    }
    return b;
}

/// Unit vector along (x0, x1); (1, 0) at the origin.
template <class T>
void polar_unit(T x0, T x1, T& u0, T& u1) {
    const T n = std::sqrt(x0 * x0 + x1 * x1);
    if (n > T(0)) {
        u0 = x0 / n;
        u1 = x1 / n;
    } else {
        u0 = T(1);
        u1 = T(0);
    }
}

/// Everything the backward pass needs.
struct ROMForward {
    MLPCache enc, e_plus, e_minus, dec0, dec1;
    Eigen::RowVectorXd P, u0, u1, ct, st, r, c, s, omega, ca, sa, c1, s1;
    Eigen::MatrixXd out0, out1;  ///< physical
};

inline void rom_forward(const ROMParams& rp, const ROMBatch& b, ROMForward& f) {
    const double* th = rp.theta.data();
    const Eigen::MatrixXd z = mlp_forward(th + rp.encoder_offset(), rp.layout.encoder, b.x, &f.enc);
    f.P = z.row(0);
    if (rp.layout.polar_angle) {
        f.u0.resize(b.x.cols());
        f.u1.resize(b.x.cols());
        for (Eigen::Index k = 0; k < b.x.cols(); ++k) polar_unit(b.x(0, k), b.x(1, k), f.u0(k), f.u1(k));
        f.ct = f.u0.array() * z.row(1).array() - f.u1.array() * z.row(2).array();
        f.st = f.u0.array() * z.row(2).array() + f.u1.array() * z.row(1).array();
    } else {
        f.ct = z.row(1);
        f.st = z.row(2);
    }
    f.r = (f.ct.array().square() + f.st.array().square()).sqrt();
    f.c = f.ct.array() / f.r.array();
    f.s = f.st.array() / f.r.array();
    const Eigen::MatrixXd Ep =
        mlp_forward(th + rp.energy_offset(), rp.layout.energy, (f.P.array() + kOmegaStep).matrix(), &f.e_plus);
    const Eigen::MatrixXd Em =
        mlp_forward(th + rp.energy_offset(), rp.layout.energy, (f.P.array() - kOmegaStep).matrix(), &f.e_minus);
    f.omega = (Ep - Em) / (2.0 * kOmegaStep);
    const Eigen::ArrayXXd ang = f.omega.array() * b.tau.array();
    f.ca = ang.cos().matrix();
    f.sa = ang.sin().matrix();
    f.c1 = f.c.array() * f.ca.array() - f.s.array() * f.sa.array();
    f.s1 = f.s.array() * f.ca.array() + f.c.array() * f.sa.array();
    const Eigen::Index B = b.x.cols();
    Eigen::MatrixXd d0(3, B), d1(3, B);
    d0 << f.P, f.c, f.s;
    d1 << f.P, f.c1, f.s1;
    f.out0 = mlp_forward(th + rp.decoder_offset(), rp.layout.decoder, d0, &f.dec0);
    f.out1 = mlp_forward(th + rp.decoder_offset(), rp.layout.decoder, d1, &f.dec1);
    for (int i = 0; i < 2; ++i) {
        f.out0.row(i) = f.out0.row(i).array() * rp.scale[i] + rp.mean[i];
        f.out1.row(i) = f.out1.row(i).array() * rp.scale[i] + rp.mean[i];
    }
}

/// Summed (not averaged) losses of a batch; gradient of
/// (w_r * recon + w_p * pred) / norm accumulated into grad when non-null.
inline LossParts rom_batch_loss(const ROMParams& rp, const ROMBatch& b, double w_r, double w_p, double norm,
                                double* grad) {
    ROMForward f;
    rom_forward(rp, b, f);
    const Eigen::MatrixXd e0 = f.out0 - b.s, e1 = f.out1 - b.y;
    LossParts L;
    L.recon = e0.squaredNorm();
    L.pred = e1.squaredNorm();
    if (!grad) return L;

    const double* th = rp.theta.data();
    Eigen::MatrixXd g0 = (2.0 * w_r / norm) * e0, g1 = (2.0 * w_p / norm) * e1;
    for (int i = 0; i < 2; ++i) {
        g0.row(i) *= rp.scale[i];
        g1.row(i) *= rp.scale[i];
    }
    const Eigen::MatrixXd dd0 = mlp_backward(th + rp.decoder_offset(), grad + rp.decoder_offset(), rp.layout.decoder,
                                             f.dec0, g0);
    const Eigen::MatrixXd dd1 = mlp_backward(th + rp.decoder_offset(), grad + rp.decoder_offset(), rp.layout.decoder,
                                             f.dec1, g1);
    Eigen::RowVectorXd dP = dd0.row(0) + dd1.row(0);
    const Eigen::ArrayXXd dc1 = dd1.row(1).array(), ds1 = dd1.row(2).array();
    Eigen::ArrayXXd dc = dd0.row(1).array() + dc1 * f.ca.array() + ds1 * f.sa.array();
    Eigen::ArrayXXd ds = dd0.row(2).array() - dc1 * f.sa.array() + ds1 * f.ca.array();
    const Eigen::ArrayXXd dang = -dc1 * f.s1.array() + ds1 * f.c1.array();
    const Eigen::MatrixXd domega = (dang * b.tau.array()).matrix();
    const Eigen::MatrixXd dEp = domega / (2.0 * kOmegaStep);
    const Eigen::MatrixXd dEm = -dEp;
    dP += mlp_backward(th + rp.energy_offset(), grad + rp.energy_offset(), rp.layout.energy, f.e_plus, dEp);
    dP += mlp_backward(th + rp.energy_offset(), grad + rp.energy_offset(), rp.layout.energy, f.e_minus, dEm);
    const Eigen::ArrayXXd c = f.c.array(), s = f.s.array(), r = f.r.array();
    const Eigen::ArrayXXd dct = (dc * (1.0 - c * c) - ds * c * s) / r;
    const Eigen::ArrayXXd dst = (ds * (1.0 - s * s) - dc * c * s) / r;
    Eigen::MatrixXd dz(3, b.x.cols());
    if (rp.layout.polar_angle) {
        const Eigen::ArrayXXd u0 = f.u0.array(), u1 = f.u1.array();
        dz << dP, (dct * u0 + dst * u1).matrix(), (dst * u0 - dct * u1).matrix();
    } else {
        dz << dP, dct.matrix(), dst.matrix();
    }
    mlp_backward(th + rp.encoder_offset(), grad + rp.encoder_offset(), rp.layout.encoder, f.enc, dz);
    return L;
}

}  // namespace detail

struct Encoded {
    double P = 0.0, cosQ = 1.0, sinQ = 0.0;
    double Q() const { return std::atan2(sinQ, cosQ); }
};

inline Encoded rom_encode(const ROMParams& rp, const PhaseState& s) {
    Eigen::MatrixXd x(2, 1);
    x << (s.p - rp.mean[0]) / rp.scale[0], (s.q - rp.mean[1]) / rp.scale[1];
    const Eigen::MatrixXd z = detail::mlp_forward(rp.theta.data() + rp.encoder_offset(), rp.layout.encoder, x);
    double ct = z(1, 0), st = z(2, 0);
    if (rp.layout.polar_angle) {
        double u0, u1;
        detail::polar_unit(x(0, 0), x(1, 0), u0, u1);
        ct = u0 * z(1, 0) - u1 * z(2, 0);
        st = u0 * z(2, 0) + u1 * z(1, 0);
    }
    const double r = std::hypot(ct, st);
    return {z(0, 0), ct / r, st / r};
}

inline double rom_energy(const ROMParams& rp, double P) {
    Eigen::MatrixXd x(1, 1);
    x << P;
    return detail::mlp_forward(rp.theta.data() + rp.energy_offset(), rp.layout.energy, x)(0, 0);
}

/// omega_Q = dE/dP by central difference with step 1e-4.
inline double rom_omega(const ROMParams& rp, double P) {
    return (rom_energy(rp, P + kOmegaStep) - rom_energy(rp, P - kOmegaStep)) / (2.0 * kOmegaStep);
}

/// Rotates (cos Q, sin Q) by angle.
inline Encoded rom_rotate(const Encoded& e, double angle) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    return {e.P, e.cosQ * ca - e.sinQ * sa, e.sinQ * ca + e.cosQ * sa};
}

inline PhaseState rom_decode(const ROMParams& rp, const Encoded& e, double tau = 0.0) {
    Eigen::MatrixXd d(3, 1);
    d << e.P, e.cosQ, e.sinQ;
    const Eigen::MatrixXd y = detail::mlp_forward(rp.theta.data() + rp.decoder_offset(), rp.layout.decoder, d);
    return {y(1, 0) * rp.scale[1] + rp.mean[1], y(0, 0) * rp.scale[0] + rp.mean[0], tau};
}

/// Encode, advance Q by omega_Q(P) * tau, decode. tau = 0 is the plain
/// autoencoder.
inline PhaseState rom_predict(const ROMParams& rp, const PhaseState& s, double tau) {
    Encoded e = rom_encode(rp, s);
    if (tau != 0.0) e = rom_rotate(e, rom_omega(rp, e.P) * tau);
    return rom_decode(rp, e, s.tau + tau);
}

/// w_r * mean |decode(encode(s)) - s|^2 + w_p * mean |predict(s, tau) - target|^2
inline LossParts rom_loss(const ROMParams& rp, const std::vector<TrainingPair>& batch, double w_r = 1.0,
                          double w_p = 1.0) {
    if (batch.empty()) throw ConfigError("rom_loss: empty batch");
    const auto b = detail::make_batch(rp, batch, 0, batch.size());
    LossParts L = detail::rom_batch_loss(rp, b, w_r, w_p, 1.0, nullptr);
    const double n = static_cast<double>(batch.size());
    L.recon /= n;
    L.pred /= n;
    L.total = w_r * L.recon + w_p * L.pred;
    return L;
}

inline std::vector<double> rom_gradient(const ROMParams& rp, const std::vector<TrainingPair>& batch, double w_r = 1.0,
                                        double w_p = 1.0) {
    if (batch.empty()) throw ConfigError("rom_gradient: empty batch");
    std::vector<double> g(rp.size(), 0.0);
    const auto b = detail::make_batch(rp, batch, 0, batch.size());
    detail::rom_batch_loss(rp, b, w_r, w_p, static_cast<double>(batch.size()), g.data());
    return g;
}

namespace detail {

/// Smallest |pre-activation| over every network evaluation the loss makes.
inline double min_preactivation(const ROMParams& rp, const std::vector<TrainingPair>& batch) {
    const auto b = make_batch(rp, batch, 0, batch.size());
    ROMForward f;
    rom_forward(rp, b, f);
    double m = std::numeric_limits<double>::infinity();
    for (const MLPCache* c : {&f.enc, &f.e_plus, &f.e_minus, &f.dec0, &f.dec1})
        for (std::size_t l = 0; l + 1 < c->pre.size(); ++l) m = std::min(m, c->pre[l].cwiseAbs().minCoeff());
    return m;
}

}  // namespace detail

namespace detail {

/// Loss in scalar type T, used with long double as the finite-difference
/// reference; omega's difference quotient would otherwise amplify rounding
/// by 1/(2 * 1e-4).
template <class T>
T rom_loss_in(const ROMParams& rp, const std::vector<TrainingPair>& batch, double w_r, double w_p,
              std::vector<char>* pattern = nullptr) {
    using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    auto mlp = [&](std::size_t off, const std::vector<int>& s, M a) {
        const double* th = rp.theta.data() + off;
        const std::size_t L = s.size() - 1;
        for (std::size_t l = 0; l < L; ++l) {
            const M W = Eigen::Map<const Eigen::MatrixXd>(th, s[l + 1], s[l]).cast<T>();
            th += static_cast<std::size_t>(s[l + 1]) * s[l];
            const Eigen::Matrix<T, Eigen::Dynamic, 1> b = Eigen::Map<const Eigen::VectorXd>(th, s[l + 1]).cast<T>();
            th += s[l + 1];
            M z = W * a;
            z.colwise() += b;
            if (pattern && l + 1 < L)
                for (Eigen::Index k = 0; k < z.size(); ++k) pattern->push_back(z(k) > T(0));
            a = l + 1 < L ? M(z.cwiseMax(T(0))) : z;
        }
        return a;
    };
    // E(P+) - E(P-) propagated as a difference layer by layer, so that
    // biases and shared active units cancel exactly
    auto energy_difference = [&](T p_plus, T p_minus) {
        const std::vector<int>& s = rp.layout.energy;
        const double* th = rp.theta.data() + rp.energy_offset();
        M ap(1, 1), am(1, 1), d(1, 1);
        ap << p_plus;
        am << p_minus;
        d << p_plus - p_minus;
        const std::size_t L = s.size() - 1;
        for (std::size_t l = 0; l < L; ++l) {
            const M W = Eigen::Map<const Eigen::MatrixXd>(th, s[l + 1], s[l]).cast<T>();
            th += static_cast<std::size_t>(s[l + 1]) * s[l];
            const Eigen::Matrix<T, Eigen::Dynamic, 1> b = Eigen::Map<const Eigen::VectorXd>(th, s[l + 1]).cast<T>();
            th += s[l + 1];
            M zp = W * ap, zm = W * am;
            zp.colwise() += b;
            zm.colwise() += b;
            M dz = W * d;
            if (l + 1 == L) return dz(0, 0);
            for (Eigen::Index k = 0; k < dz.rows(); ++k) {
                const bool on_p = zp(k, 0) > T(0), on_m = zm(k, 0) > T(0);
                if (pattern) {
                    pattern->push_back(on_p);
                    pattern->push_back(on_m);
                }
                if (on_p != on_m) dz(k, 0) = (on_p ? zp(k, 0) : T(0)) - (on_m ? zm(k, 0) : T(0));
                else if (!on_p) dz(k, 0) = T(0);
            }
            ap = zp.cwiseMax(T(0));
            am = zm.cwiseMax(T(0));
            d = dz;
        }
        return T(0);
    };
    T recon = 0, pred = 0;
    const T step = static_cast<T>(kOmegaStep);
    for (const auto& pr : batch) {
        M x(2, 1);
        x << (T(pr.s.p) - T(rp.mean[0])) / T(rp.scale[0]), (T(pr.s.q) - T(rp.mean[1])) / T(rp.scale[1]);
        const M z = mlp(rp.encoder_offset(), rp.layout.encoder, x);
        const T P = z(0, 0);
        T ct = z(1, 0), st = z(2, 0);
        if (rp.layout.polar_angle) {
            T u0, u1;
            polar_unit(x(0, 0), x(1, 0), u0, u1);
            ct = u0 * z(1, 0) - u1 * z(2, 0);
            st = u0 * z(2, 0) + u1 * z(1, 0);
        }
        const T r = std::sqrt(ct * ct + st * st);
        const T c = ct / r, s = st / r;
        const T omega = energy_difference(P + step, P - step) / (T(2) * step);
        const T a = omega * T(pr.tau);
        M d0(3, 1), d1(3, 1);
        d0 << P, c, s;
        d1 << P, c * std::cos(a) - s * std::sin(a), s * std::cos(a) + c * std::sin(a);
        const M o0 = mlp(rp.decoder_offset(), rp.layout.decoder, d0);
        const M o1 = mlp(rp.decoder_offset(), rp.layout.decoder, d1);
        const T tgt0[2] = {T(pr.s.p), T(pr.s.q)}, tgt1[2] = {T(pr.target.p), T(pr.target.q)};
        for (int i = 0; i < 2; ++i) {
            const T e0 = o0(i, 0) * T(rp.scale[i]) + T(rp.mean[i]) - tgt0[i];
            const T e1 = o1(i, 0) * T(rp.scale[i]) + T(rp.mean[i]) - tgt1[i];
            recon += e0 * e0;
            pred += e1 * e1;
        }
    }
    const T n = static_cast<T>(batch.size());
    return T(w_r) * recon / n + T(w_p) * pred / n;
}

}  // namespace detail

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_backprop = 0.0;
    double worst_fd = 0.0;
    double gradient_max = 0.0;
    int nudges = 0;  ///< input perturbations applied to leave ReLU kinks
    int step_reductions = 0;  ///< FD steps shrunk because +h and -h straddled a kink
    std::vector<TrainingPair> batch;  ///< batch actually checked
};

/// Compares the backpropagated gradient with central differences (step
/// 1e-5, loss evaluated in long double) for every parameter. Inputs sitting
/// within 1e-4 of a ReLU kink are first nudged by 1e-3; a step whose two
/// evaluations still differ in ReLU pattern is shrunk tenfold, down to 1e-9. Relative error is |a - b| / max(|a|, |b|, floor)
/// with floor = 1e-6 * max|gradient|, so parameters with no influence do not
/// divide by zero.
inline GradCheckReport rom_grad_check(const ROMParams& rp, std::vector<TrainingPair> batch, double w_r = 1.0,
                                      double w_p = 1.0) {
    if (batch.empty() || batch.size() > 8) throw ConfigError("rom_grad_check: batch size must be 1..8");
    GradCheckReport rep;
    for (int tries = 0; tries < 50 && detail::min_preactivation(rp, batch) < 1e-4; ++tries) {
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const double a = 2.399963 * (tries * 8.0 + k + 1.0);  // golden-angle directions
            batch[k].s.p += 1e-3 * std::cos(a);
            batch[k].s.q += 1e-3 * std::sin(a);
        }
        ++rep.nudges;
    }
    rep.batch = batch;
    const std::vector<double> g = rom_gradient(rp, batch, w_r, w_p);
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    rep.gradient_max = gmax;
    const double floor = std::max(1e-6 * gmax, 1e-300);
    ROMParams work = rp;
    std::vector<char> pat_p, pat_m;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double t0 = work.theta[i];
        double fd = 0.0;
        // shrink the step until both evaluations see the same ReLU pattern
        for (double h = 1e-5; h >= 1e-9; h *= 0.1) {
            const double xp = t0 + h, xm = t0 - h;  // representable nodes, exact spacing below
            pat_p.clear();
            pat_m.clear();
            work.theta[i] = xp;
            const long double lp = detail::rom_loss_in<long double>(work, batch, w_r, w_p, &pat_p);
            work.theta[i] = xm;
            const long double lm = detail::rom_loss_in<long double>(work, batch, w_r, w_p, &pat_m);
            fd = static_cast<double>((lp - lm) / (static_cast<long double>(xp) - static_cast<long double>(xm)));
            if (pat_p == pat_m) break;
            ++rep.step_reductions;
        }
        work.theta[i] = t0;
        const double rel = std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), floor});
        if (!(rel <= rep.max_rel_error)) {
            rep.max_rel_error = rel;
            rep.worst_index = i;
            rep.worst_backprop = g[i];
            rep.worst_fd = fd;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Data

struct ROMDataset {
    std::vector<Trajectory> trajectories;
    std::vector<double> energies;
    std::vector<double> periods;
};

/// Pendulum trajectories at evenly spaced energies in [E_lo, E_hi], each
/// started at a seeded random phase of its orbit and sampled every `spacing`.
inline ROMDataset make_pendulum_dataset(int n_traj = 200, double E_lo = -0.99, double E_hi = -0.5,
                                        double duration = 16.0, double spacing = 0.05, std::uint64_t seed = 11) {
    if (n_traj < 2) throw ConfigError("dataset: need at least 2 trajectories");
    if (!(E_lo > -1.0) || !(E_hi < 1.0) || !(E_hi > E_lo)) throw ConfigError("dataset: energy band must lie in (-1, 1)");
    const ModelSpec m = make_pendulum();
    const BasinInfo basin = find_basin(m, 0.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ROMDataset ds;
    const double dt = spacing / 50.0;
    for (int i = 0; i < n_traj; ++i) {
        const double E = E_lo + (E_hi - E_lo) * i / (n_traj - 1);
        const OrbitSummary os = orbit_summary(m, basin, E);
        PhaseState s{0.0, std::sqrt(2.0 * (E + 1.0)), 0.0};
        // random phase: advance by a fraction of the period
        const long burn = std::lround(unit(rng) * os.period / dt);
        for (long k = 0; k < burn; ++k) s = step_symplectic(m, s, dt);
        s.tau = 0.0;
        IntegratorConfig cfg{dt, std::lround(duration / dt), 50, Scheme::leapfrog};
        Trajectory t = integrate(m, s, cfg, nullptr, seed);
        ds.trajectories.push_back(std::move(t));
        ds.energies.push_back(E);
        ds.periods.push_back(os.period);
    }
    return ds;
}

/// Every tenth trajectory (index % 10 == 9) is held out.
inline bool is_held_out(std::size_t i) { return i % 10 == 9; }

// ---------------------------------------------------------------------------
// Training

struct TrainHistoryRow {
    int epoch = 0;
    double loss_recon = 0.0;
    double loss_pred = 0.0;
};

class TrainingDivergedError : public DivergedError {
public:
    TrainingDivergedError(const std::string& what, std::vector<TrainHistoryRow> history)
        : DivergedError(what, PhaseState{}), history(std::move(history)) {}
    std::vector<TrainHistoryRow> history;
};

/// Fixes the additive gauge of P after training: the smallest encoded P over
/// the given trajectories becomes 1.
inline void rom_fix_gauge(ROMParams& rp, const std::vector<Trajectory>& trajectories,
                          const std::vector<std::size_t>& idx) {
    double p_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : idx)
        for (const auto& s : trajectories[i].samples) p_min = std::min(p_min, rom_encode(rp, s).P);
    if (std::isfinite(p_min)) rom_regauge(rp, 1.0 - p_min);
}

struct TrainResult {
    ROMParams params;  ///< params.seed is the seed of the kept run
    std::vector<TrainHistoryRow> history;
    std::vector<double> restart_losses;  ///< tail training loss per restart (infinity if diverged)
};

namespace detail {

/// One training run from rom_init(layout, cfg.seed), gradients sharded over
/// cfg.threads. No gauge fixing.
inline TrainResult train_once(const std::vector<Trajectory>& trajectories, const std::vector<std::size_t>& train_idx,
                              const TrainConfig& cfg, const ROMLayout& layout) {
    if (train_idx.size() < 10) throw ConfigError("rom_train: need at least 10 training trajectories");
    const double h = trajectories.at(train_idx.front()).sample_spacing();
    std::vector<long> offsets;
    for (double t : cfg.taus) {
        const long k = std::lround(t / h);
        if (k < 1 || std::abs(k * h - t) > 1e-9 * std::max(1.0, t))
            throw ConfigError("rom_train: tau offsets must be multiples of the sample spacing");
        offsets.push_back(k);
    }
    for (std::size_t i : train_idx) {
        const auto& tr = trajectories.at(i);
        if (std::abs(tr.sample_spacing() - h) > 1e-12) throw ConfigError("rom_train: mixed sample spacings");
        if (static_cast<long>(tr.samples.size()) <= *std::max_element(offsets.begin(), offsets.end()))
            throw ConfigError("rom_train: trajectory shorter than the largest tau");
    }

    TrainResult res;
    res.params = rom_init(layout, cfg.seed);
    ROMParams& rp = res.params;
    // normalization of (p, q) from the training data
    double n = 0.0;
    std::array<double, 2> sum{0, 0}, sq{0, 0};
    for (std::size_t i : train_idx)
        for (const auto& s : trajectories[i].samples) {
            sum[0] += s.p;
            sum[1] += s.q;
            sq[0] += s.p * s.p;
            sq[1] += s.q * s.q;
            n += 1.0;
        }
    for (int k = 0; k < 2; ++k) {
        rp.mean[k] = sum[k] / n;
        rp.scale[k] = std::sqrt(std::max(sq[k] / n - rp.mean[k] * rp.mean[k], 1e-24));
    }

    const std::size_t P = rp.size();
    std::vector<double> m1(P, 0.0), m2(P, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    long step = 0;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const double decay = std::log(cfg.final_learning_rate / cfg.learning_rate) / std::max(1, cfg.epochs - 1);
    std::vector<TrainingPair> pairs;
    const int shards = cfg.threads;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        pairs.clear();
        for (std::size_t i : train_idx) {
            const auto& tr = trajectories[i];
            for (int r = 0; r < cfg.pairs_per_trajectory; ++r) {
                const std::size_t which = static_cast<std::size_t>(rng() % offsets.size());
                const long k = offsets[which];
                const long t0 = static_cast<long>(rng() % static_cast<std::uint64_t>(tr.samples.size() - k));
                pairs.push_back({tr.samples[t0], tr.samples[t0 + k], cfg.taus[which]});
            }
        }
        for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng() % i]);

        const double lr = cfg.learning_rate * std::exp(decay * epoch);
        double sum_r = 0.0, sum_p = 0.0;
        for (std::size_t b0 = 0; b0 < pairs.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b1i = std::min(pairs.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            const double norm = static_cast<double>(b1i - b0);
            // shards cover contiguous column ranges; gradients are summed in shard order
            const std::size_t ns = std::min<std::size_t>(static_cast<std::size_t>(shards), b1i - b0);
            std::vector<std::vector<double>> grads(ns, std::vector<double>(P, 0.0));
            std::vector<LossParts> parts(ns);
            detail::parallel_for(ns, shards, [&](std::size_t k) {
                const std::size_t lo = b0 + (b1i - b0) * k / ns, hi = b0 + (b1i - b0) * (k + 1) / ns;
                const auto bt = detail::make_batch(rp, pairs, lo, hi);
                parts[k] = detail::rom_batch_loss(rp, bt, cfg.w_recon, cfg.w_pred, norm, grads[k].data());
            });
            for (std::size_t k = 1; k < ns; ++k)
                for (std::size_t i = 0; i < P; ++i) grads[0][i] += grads[k][i];
            for (const auto& pt : parts) {
                sum_r += pt.recon;
                sum_p += pt.pred;
            }
            ++step;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            const auto& g = grads[0];
            for (std::size_t i = 0; i < P; ++i) {
                m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
                rp.theta[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
            }
        }
        const double np = static_cast<double>(pairs.size());
        res.history.push_back({epoch, sum_r / np, sum_p / np});
        const double total = cfg.w_recon * sum_r / np + cfg.w_pred * sum_p / np;
        if (!std::isfinite(total) || total > 1e6)
            throw TrainingDivergedError("rom_train: loss diverged at epoch " + std::to_string(epoch), res.history);
    }
    return res;
}

/// Mean total loss over the last 50 epochs.
inline double tail_loss(const std::vector<TrainHistoryRow>& h, const TrainConfig& cfg) {
    const std::size_t n = std::min<std::size_t>(50, h.size());
    double acc = 0.0;
    for (std::size_t i = h.size() - n; i < h.size(); ++i) acc += cfg.w_recon * h[i].loss_recon + cfg.w_pred * h[i].loss_pred;
    return acc / static_cast<double>(n);
}

}  // namespace detail

/// Adam on minibatches of freshly drawn pairs (s_t, s_{t+tau}). An epoch
/// draws pairs_per_trajectory pairs from every training trajectory.
///
/// With cfg.restarts = k > 1, runs from seeds seed, seed+1, ..., seed+k-1
/// are trained (in parallel over cfg.threads, each on one shard, so the
/// result does not depend on the thread count) and the one with the lowest
/// training loss over its last 50 epochs is kept. Held-out data plays no
/// part in the choice. Finally the P gauge is fixed (rom_fix_gauge).
inline TrainResult rom_train(const std::vector<Trajectory>& trajectories, const std::vector<std::size_t>& train_idx,
                             const TrainConfig& cfg, const ROMLayout& layout = {}) {
    cfg.validate();
    TrainResult best;
    if (cfg.restarts == 1) {
        best = detail::train_once(trajectories, train_idx, cfg, layout);
        best.restart_losses = {detail::tail_loss(best.history, cfg)};
    } else {
        const auto k = static_cast<std::size_t>(cfg.restarts);
        std::vector<TrainResult> runs(k);
        std::vector<std::exception_ptr> errors(k);
        detail::parallel_for(k, cfg.threads, [&](std::size_t r) {
            TrainConfig c = cfg;
            c.seed = cfg.seed + r;
            c.threads = 1;
            try {
                runs[r] = detail::train_once(trajectories, train_idx, c, layout);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        });
        std::optional<std::size_t> pick;
        std::vector<double> losses(k, std::numeric_limits<double>::infinity());
        for (std::size_t r = 0; r < k; ++r) {
            if (errors[r]) continue;
            losses[r] = detail::tail_loss(runs[r].history, cfg);
            if (!pick || losses[r] < losses[*pick]) pick = r;
        }
        if (!pick) std::rethrow_exception(errors.front());
        best = std::move(runs[*pick]);
        best.restart_losses = losses;
    }
    rom_fix_gauge(best.params, trajectories, train_idx);
    return best;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct ROMDiagnostics {
    double phase_scale = 0.0;         ///< RMS radius sqrt(<p^2 + q^2>) of the held-out data
    double recon_rms = 0.0;           ///< absolute
    double recon_rel = 0.0;           ///< recon_rms / phase_scale
    double period_pred_rms = 0.0;     ///< tau = one period
    double period_pred_rel = 0.0;
    double max_P_cv = 0.0;            ///< max over held-out trajectories of std(P)/|mean(P)|
    double mean_P_cv = 0.0;
    double min_Q_r2 = 1.0;            ///< worst unwrapped-Q linearity
    double P_within_std = 0.0;        ///< mean per-trajectory std of P
    double P_across_std = 0.0;        ///< std of per-trajectory mean P
    double omega_rel_error = 0.0;     ///< mean |omega(P) T / 2 pi - 1| over held-out samples
    std::size_t held_out = 0;
};

inline ROMDiagnostics rom_diagnostics(const ROMParams& rp, const ROMDataset& ds) {
    ROMDiagnostics d;
    double r2 = 0.0, e_rec = 0.0, e_per = 0.0, n = 0.0;
    std::vector<double> means, cvs;
    double within = 0.0;
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        if (!is_held_out(i)) continue;
        ++d.held_out;
        const auto& tr = ds.trajectories[i];
        std::vector<double> P, Q, t;
        for (const auto& s : tr.samples) {
            r2 += s.p * s.p + s.q * s.q;
            const PhaseState rec = rom_predict(rp, s, 0.0);
            e_rec += (rec.p - s.p) * (rec.p - s.p) + (rec.q - s.q) * (rec.q - s.q);
            const PhaseState per = rom_predict(rp, s, ds.periods[i]);
            e_per += (per.p - s.p) * (per.p - s.p) + (per.q - s.q) * (per.q - s.q);
            n += 1.0;
            const Encoded e = rom_encode(rp, s);
            P.push_back(e.P);
            d.omega_rel_error += std::abs(rom_omega(rp, e.P) * ds.periods[i] / (2.0 * std::numbers::pi) - 1.0);
            double q = e.Q();
            if (!Q.empty()) {
                while (q - Q.back() > std::numbers::pi) q -= 2.0 * std::numbers::pi;
                while (q - Q.back() < -std::numbers::pi) q += 2.0 * std::numbers::pi;
            }
            Q.push_back(q);
            t.push_back(s.tau);
        }
        double mean = 0.0, var = 0.0;
        for (double v : P) mean += v;
        mean /= static_cast<double>(P.size());
        for (double v : P) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(P.size()));
        means.push_back(mean);
        within += sd;
        cvs.push_back(sd / std::abs(mean));
        d.min_Q_r2 = std::min(d.min_Q_r2, linear_fit(t, Q).r_squared);
    }
    if (d.held_out == 0) throw ConfigError("rom_diagnostics: dataset has no held-out trajectories");
    d.phase_scale = std::sqrt(r2 / n);
    d.omega_rel_error /= n;
    d.recon_rms = std::sqrt(e_rec / n);
    d.recon_rel = d.recon_rms / d.phase_scale;
    d.period_pred_rms = std::sqrt(e_per / n);
    d.period_pred_rel = d.period_pred_rms / d.phase_scale;
    d.max_P_cv = *std::max_element(cvs.begin(), cvs.end());
    for (double c : cvs) d.mean_P_cv += c / static_cast<double>(cvs.size());
    d.P_within_std = within / static_cast<double>(means.size());
    double mm = 0.0;
    for (double v : means) mm += v / static_cast<double>(means.size());
    for (double v : means) d.P_across_std += (v - mm) * (v - mm) / static_cast<double>(means.size());
    d.P_across_std = std::sqrt(d.P_across_std);
    return d;
}

// ---------------------------------------------------------------------------
// Persistence: <path> holds the raw float64 parameters, <path>.json the header.

inline nlohmann::json rom_header(const ROMParams& rp) {
    nlohmann::json j;
    j["format"] = "float64-le";
    j["count"] = rp.theta.size();
    j["seed"] = rp.seed;
    j["layers"] = {{"encoder", rp.layout.encoder}, {"energy", rp.layout.energy}, {"decoder", rp.layout.decoder}};
    j["polar_angle"] = rp.layout.polar_angle;
    j["normalization"] = {{"mean_p", rp.mean[0]}, {"mean_q", rp.mean[1]}, {"scale_p", rp.scale[0]}, {"scale_q", rp.scale[1]}};
    j["omega_step"] = kOmegaStep;
    return j;
}

inline void save_rom(const ROMParams& rp, const std::string& path) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw ConfigError("save_rom: cannot write " + path);
    bin.write(reinterpret_cast<const char*>(rp.theta.data()), static_cast<std::streamsize>(rp.theta.size() * sizeof(double)));
    std::ofstream hdr(path + ".json");
    if (!hdr) throw ConfigError("save_rom: cannot write " + path + ".json");
    hdr << std::setprecision(17) << rom_header(rp).dump(2) << '\n';
}

inline ROMParams load_rom(const std::string& path) {
    std::ifstream hdr(path + ".json");
    if (!hdr) throw ConfigError("load_rom: missing header " + path + ".json");
    nlohmann::json j;
    try {
        hdr >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("load_rom: bad header: ") + e.what());
    }
    ROMParams rp;
    try {
        rp.layout.encoder = j.at("layers").at("encoder").get<std::vector<int>>();
        rp.layout.energy = j.at("layers").at("energy").get<std::vector<int>>();
        rp.layout.decoder = j.at("layers").at("decoder").get<std::vector<int>>();
        rp.layout.polar_angle = j.value("polar_angle", true);
        rp.seed = j.at("seed").get<std::uint64_t>();
        const auto& nz = j.at("normalization");
        rp.mean = {nz.at("mean_p").get<double>(), nz.at("mean_q").get<double>()};
        rp.scale = {nz.at("scale_p").get<double>(), nz.at("scale_q").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("load_rom: bad header: ") + e.what());
    }
    rp.layout.validate();
    rp.theta.assign(rp.size(), 0.0);
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw ConfigError("load_rom: cannot read " + path);
    bin.read(reinterpret_cast<char*>(rp.theta.data()), static_cast<std::streamsize>(rp.theta.size() * sizeof(double)));
    if (bin.gcount() != static_cast<std::streamsize>(rp.theta.size() * sizeof(double)))
        throw ConfigError("load_rom: parameter file is truncated");
    return rp;
}

inline void write_history_csv(std::ostream& os, const std::vector<TrainHistoryRow>& h) {
    os << "epoch,loss_recon,loss_pred\n" << std::setprecision(17);
    for (const auto& r : h) os << r.epoch << ',' << r.loss_recon << ',' << r.loss_pred << '\n';
}

}  // namespace collective
