#include "totkit/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "totkit/errors.hpp"

namespace totkit::neural {

void matvec_acc(const Mat& m, const Vec& x, Vec& y) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

void matvec_t_acc(const Mat& m, const Vec& x, Vec& y) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        const double xr = x[r];
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
    }
}

void outer_acc(Mat& m, const Vec& a, const Vec& b) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* row = m.row(r);
        const double ar = a[r];
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += ar * b[c];
    }
}

void assert_finite(const Vec& v, const char* where) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + where);
}

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::kIdentity;
    if (name == "tanh") return Activation::kTanh;
    if (name == "relu") return Activation::kRelu;
    if (name == "softplus") return Activation::kSoftplus;
    throw ConfigError("unknown activation: " + name);
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::kIdentity: return "identity";
        case Activation::kTanh: return "tanh";
        case Activation::kRelu: return "relu";
        case Activation::kSoftplus: return "softplus";
    }
    throw ConfigError("unknown activation enum value");
}

double apply_activation(Activation act, double x) {
    switch (act) {
        case Activation::kIdentity: return x;
        case Activation::kTanh: return std::tanh(x);
        case Activation::kRelu: return x > 0.0 ? x : 0.0;
        case Activation::kSoftplus: return softplus(x);
    }
    return x;
}

double activation_grad(Activation act, double x, double y) {
    switch (act) {
        case Activation::kIdentity: return 1.0;
        case Activation::kTanh: return 1.0 - y * y;
        case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::kSoftplus: return sigmoid(x);
    }
    return 1.0;
}

void FcParams::init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    for (double& x : w.a) x = rng.uniform(-bound, bound);
    std::fill(b.begin(), b.end(), 0.0);
}

void FcGrads::zero() {
    std::fill(w.a.begin(), w.a.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
}

Vec fc_forward(const FcParams& p, const Vec& x) {
    if (x.size() != p.in_dim())
        throw ShapeError("fc_forward: input size " + std::to_string(x.size()) + " != " +
                         std::to_string(p.in_dim()));
    Vec y = p.b;
    matvec_acc(p.w, x, y);
    for (double& v : y) v = apply_activation(p.act, v);
    assert_finite(y, "fc_forward output");
    return y;
}

Vec fc_backward(const FcParams& p, const Vec& x, const Vec& y, const Vec& dy, FcGrads& grads) {
    if (dy.size() != p.out_dim() || x.size() != p.in_dim() || y.size() != p.out_dim())
        throw ShapeError("fc_backward: cached shapes disagree with parameters");
    Vec dpre(p.out_dim());
    switch (p.act) {
        case Activation::kIdentity:
            dpre = dy;
            break;
        case Activation::kTanh:
            for (std::size_t r = 0; r < p.out_dim(); ++r) dpre[r] = dy[r] * (1.0 - y[r] * y[r]);
            break;
        case Activation::kRelu:
            // y carries the sign of the pre-activation; subgradient at 0 is 0.
            for (std::size_t r = 0; r < p.out_dim(); ++r) dpre[r] = y[r] > 0.0 ? dy[r] : 0.0;
            break;
        case Activation::kSoftplus: {
            // softplus' = sigmoid(pre-activation); recompute Wx + b.
            Vec pre = p.b;
            matvec_acc(p.w, x, pre);
            for (std::size_t r = 0; r < p.out_dim(); ++r) dpre[r] = dy[r] * sigmoid(pre[r]);
            break;
        }
    }
    outer_acc(grads.w, dpre, x);
    for (std::size_t r = 0; r < p.out_dim(); ++r) grads.b[r] += dpre[r];
    Vec dx(p.in_dim(), 0.0);
    matvec_t_acc(p.w, dpre, dx);
    return dx;
}

void LstmCellParams::init(Rng& rng) {
    const double bx = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    for (double& x : w_x.a) x = rng.uniform(-bx, bx);
    for (double& x : w_h.a) x = rng.uniform(-bh, bh);
    std::fill(b.begin(), b.end(), 0.0);
    // Forget-gate bias starts at 1 so early training does not erase the cell.
    for (std::size_t k = hidden_dim; k < 2 * hidden_dim; ++k) b[k] = 1.0;
}

void LstmGrads::zero() {
    std::fill(w_x.a.begin(), w_x.a.end(), 0.0);
    std::fill(w_h.a.begin(), w_h.a.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
}

namespace {

void lstm_gate_preacts(const LstmCellParams& p, const Vec& x, const Vec& h_prev, Vec& z) {
    if (x.size() != p.input_dim)
        throw ShapeError("lstm_step: input size " + std::to_string(x.size()) + " != " +
                         std::to_string(p.input_dim));
    if (h_prev.size() != p.hidden_dim)
        throw ShapeError("lstm_step: hidden size " + std::to_string(h_prev.size()) + " != " +
                         std::to_string(p.hidden_dim));
    z = p.b;
    matvec_acc(p.w_x, x, z);
    matvec_acc(p.w_h, h_prev, z);
}

}  // namespace

void lstm_step(const LstmCellParams& p, const Vec& x, const Vec& h, const Vec& c, Vec& h_out, Vec& c_out) {
    if (c.size() != p.hidden_dim)
        throw ShapeError("lstm_step: cell size " + std::to_string(c.size()) + " != " +
                         std::to_string(p.hidden_dim));
    Vec z;
    lstm_gate_preacts(p, x, h, z);
    const std::size_t H = p.hidden_dim;
    h_out.resize(H);
    c_out.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        const double gi = sigmoid(z[k]);
        const double gf = sigmoid(z[H + k]);
        const double gg = std::tanh(z[2 * H + k]);
        const double go = sigmoid(z[3 * H + k]);
        const double cn = gf * c[k] + gi * gg;
        c_out[k] = cn;
        h_out[k] = go * std::tanh(cn);
    }
    assert_finite(h_out, "lstm_step h");
    assert_finite(c_out, "lstm_step c");
}

LstmStepCache lstm_step_cached(const LstmCellParams& p, const Vec& x, const Vec& h_prev, const Vec& c_prev) {
    if (c_prev.size() != p.hidden_dim)
        throw ShapeError("lstm_step: cell size " + std::to_string(c_prev.size()) + " != " +
                         std::to_string(p.hidden_dim));
    Vec z;
    lstm_gate_preacts(p, x, h_prev, z);
    const std::size_t H = p.hidden_dim;
    LstmStepCache s;
    s.i.resize(H);
    s.f.resize(H);
    s.g.resize(H);
    s.o.resize(H);
    s.c.resize(H);
    s.tanh_c.resize(H);
    s.h.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        s.i[k] = sigmoid(z[k]);
        s.f[k] = sigmoid(z[H + k]);
        s.g[k] = std::tanh(z[2 * H + k]);
        s.o[k] = sigmoid(z[3 * H + k]);
        s.c[k] = s.f[k] * c_prev[k] + s.i[k] * s.g[k];
        s.tanh_c[k] = std::tanh(s.c[k]);
        s.h[k] = s.o[k] * s.tanh_c[k];
    }
    assert_finite(s.h, "lstm_step h");
    assert_finite(s.c, "lstm_step c");
    return s;
}

void lstm_step_backward(const LstmCellParams& p, const LstmStepCache& s, const Vec& x, const Vec& h_prev,
                        const Vec& c_prev, const Vec& dh, const Vec& dc, LstmGrads& grads, Vec& dx_out,
                        Vec& dh_prev_out, Vec& dc_prev_out) {
    const std::size_t H = p.hidden_dim;
    if (dh.size() != H || dc.size() != H)
        throw ShapeError("lstm_step_backward: gradient shapes disagree with hidden_dim");
    Vec dz(4 * H);
    dc_prev_out.assign(H, 0.0);
    for (std::size_t k = 0; k < H; ++k) {
        const double do_ = dh[k] * s.tanh_c[k];
        const double dct = dc[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
        const double di = dct * s.g[k];
        const double df = dct * c_prev[k];
        const double dg = dct * s.i[k];
        dc_prev_out[k] = dct * s.f[k];
        dz[k] = di * s.i[k] * (1.0 - s.i[k]);
        dz[H + k] = df * s.f[k] * (1.0 - s.f[k]);
        dz[2 * H + k] = dg * (1.0 - s.g[k] * s.g[k]);
        dz[3 * H + k] = do_ * s.o[k] * (1.0 - s.o[k]);
    }
    outer_acc(grads.w_x, dz, x);
    outer_acc(grads.w_h, dz, h_prev);
    for (std::size_t k = 0; k < 4 * H; ++k) grads.b[k] += dz[k];
    dx_out.assign(p.input_dim, 0.0);
    matvec_t_acc(p.w_x, dz, dx_out);
    dh_prev_out.assign(H, 0.0);
    matvec_t_acc(p.w_h, dz, dh_prev_out);
}

AdamState::AdamState(const std::vector<ParamView>& params, AdamHyper hyper) : hyper_(hyper) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p.size, 0.0);
        v_.emplace_back(p.size, 0.0);
    }
}

void AdamState::step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ShapeError("adam_step: parameter/gradient block count mismatch");
    ++t_;
    const double corr1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
    for (std::size_t blk = 0; blk < params.size(); ++blk) {
        if (params[blk].size != m_[blk].size() || grads[blk].size != m_[blk].size())
            throw ShapeError("adam_step: block " + std::to_string(blk) + " shape mismatch");
        double* th = params[blk].data;
        const double* g = grads[blk].data;
        Vec& m = m_[blk];
        Vec& v = v_[blk];
        for (std::size_t k = 0; k < params[blk].size; ++k) {
            m[k] = hyper_.beta1 * m[k] + (1.0 - hyper_.beta1) * g[k];
            v[k] = hyper_.beta2 * v[k] + (1.0 - hyper_.beta2) * g[k] * g[k];
            const double m_hat = m[k] / corr1;
            const double v_hat = v[k] / corr2;
            th[k] -= hyper_.lr * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
        }
    }
}

std::size_t total_size(const std::vector<ParamView>& views) {
    std::size_t n = 0;
    for (const auto& v : views) n += v.size;
    return n;
}

double finite_diff_max_rel_error(const std::vector<ParamView>& params, const std::vector<ParamView>& analytic,
                                 const std::function<double()>& loss, double eps, Rng& rng,
                                 std::size_t max_samples) {
    if (eps < 1e-7 || eps > 1e-3)
        throw ConfigError("finite-difference eps must be in [1e-7, 1e-3]");
    if (params.size() != analytic.size())
        throw ShapeError("finite_diff: parameter/gradient block count mismatch");
    const std::size_t n = total_size(params);
    if (n == 0) throw ShapeError("finite_diff: no parameters");

    // Shuffled candidate pool; iteration stops after max_samples measurable
    // coordinates (unmeasurable ones are skipped, not counted).
    std::vector<std::size_t> indices(n);
    for (std::size_t k = 0; k < n; ++k) indices[k] = k;
    if (n > max_samples) rng.shuffle(indices);

    const auto locate = [&params](std::size_t flat) -> std::pair<std::size_t, std::size_t> {
        for (std::size_t blk = 0; blk < params.size(); ++blk) {
            if (flat < params[blk].size) return {blk, flat};
            flat -= params[blk].size;
        }
        throw ShapeError("finite_diff: flat index out of range");
    };

    double max_rel = 0.0;
    std::size_t measured = 0;
    for (const std::size_t flat : indices) {
        if (measured >= max_samples) break;
        const auto [blk, off] = locate(flat);
        double* slot = params[blk].data + off;
        const double saved = *slot;
        *slot = saved + eps;
        const double lp = loss();
        *slot = saved - eps;
        const double lm = loss();
        *slot = saved;
        // A difference this deep in the cancellation noise of the 64-bit loss
        // carries no measurable slope at this eps; such coordinates are
        // excluded from sampling, like the L1-kink points.
        const double noise_floor =
            32768.0 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(lp), std::abs(lm)});
        if (std::abs(lp - lm) <= noise_floor) continue;
        ++measured;
        const double numeric = (lp - lm) / (2.0 * eps);
        const double a = analytic[blk].data[off];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace totkit::neural
