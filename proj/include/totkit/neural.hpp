#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "totkit/rng.hpp"

namespace totkit::neural {

// All numerics are 64-bit. Vectors are plain std::vector<double>; matrices
// are row-major.
using Vec = std::vector<double>;

struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    const double* row(std::size_t r) const { return a.data() + r * cols; }
    double* row(std::size_t r) { return a.data() + r * cols; }

    bool operator==(const Mat&) const = default;
};

// y += M x
void matvec_acc(const Mat& m, const Vec& x, Vec& y);
// y += M^T x
void matvec_t_acc(const Mat& m, const Vec& x, Vec& y);
// M += a b^T
void outer_acc(Mat& m, const Vec& a, const Vec& b);

void assert_finite(const Vec& v, const char* where);

enum class Activation { kIdentity, kTanh, kRelu, kSoftplus };

Activation activation_from_string(const std::string& name);
const char* activation_name(Activation a);

double apply_activation(Activation act, double x);
// Derivative expressed in terms of the activation output y (and input x for
// relu, where the output alone is ambiguous at 0).
double activation_grad(Activation act, double x, double y);

inline double softplus(double x) {
    // log(1 + e^x), stable for large |x|.
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// --- Fully-connected layer ------------------------------------------------

struct FcParams {
    Mat w;  // out_dim x in_dim
    Vec b;  // out_dim
    Activation act = Activation::kIdentity;

    FcParams() = default;
    FcParams(std::size_t out_dim, std::size_t in_dim, Activation a)
        : w(out_dim, in_dim), b(out_dim, 0.0), act(a) {}

    std::size_t in_dim() const { return w.cols; }
    std::size_t out_dim() const { return w.rows; }

    // Uniform +-1/sqrt(fan_in) weights, zero biases.
    void init(Rng& rng);
};

struct FcGrads {
    Mat w;
    Vec b;

    explicit FcGrads(const FcParams& p) : w(p.out_dim(), p.in_dim()), b(p.out_dim(), 0.0) {}
    void zero();
};

// y = act(Wx + b). Throws ShapeError on dimension mismatch, NumericError if
// the output is non-finite.
Vec fc_forward(const FcParams& p, const Vec& x);

// Reverse pass for one application. `x` and `y` are the cached forward
// input/output; `dy` is dL/dy. Gradients accumulate into `grads`; returns
// dL/dx.
Vec fc_backward(const FcParams& p, const Vec& x, const Vec& y, const Vec& dy, FcGrads& grads);

// --- LSTM cell --------------------------------------------------------------
// Standard single-layer cell, no peepholes. Gate order within the stacked
// 4H rows is i, f, g, o:
//   i,f,o = sigmoid(.), g = tanh(.)
//   c' = f*c + i*g
//   h' = o * tanh(c')

struct LstmCellParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Mat w_x;  // 4H x input_dim
    Mat w_h;  // 4H x H
    Vec b;    // 4H

    LstmCellParams() = default;
    LstmCellParams(std::size_t in_dim, std::size_t hid_dim)
        : input_dim(in_dim), hidden_dim(hid_dim), w_x(4 * hid_dim, in_dim), w_h(4 * hid_dim, hid_dim),
          b(4 * hid_dim, 0.0) {}

    // Uniform +-1/sqrt(fan_in) weights; zero biases except forget gate = 1.
    void init(Rng& rng);
};

struct LstmGrads {
    Mat w_x;
    Mat w_h;
    Vec b;

    explicit LstmGrads(const LstmCellParams& p)
        : w_x(4 * p.hidden_dim, p.input_dim), w_h(4 * p.hidden_dim, p.hidden_dim), b(4 * p.hidden_dim, 0.0) {}
    void zero();
};

// Gate activations cached by the forward pass for one timestep.
struct LstmStepCache {
    Vec i, f, g, o;  // gate outputs, each H
    Vec c;           // c_t
    Vec tanh_c;      // tanh(c_t)
    Vec h;           // h_t
};

// One step without cache (inference path).
void lstm_step(const LstmCellParams& p, const Vec& x, const Vec& h, const Vec& c, Vec& h_out, Vec& c_out);

// One step, caching gate activations for BPTT.
LstmStepCache lstm_step_cached(const LstmCellParams& p, const Vec& x, const Vec& h_prev, const Vec& c_prev);

// Reverse step. dh/dc are dL/dh_t and dL/dc_t (dc accumulates the incoming
// carry from t+1); x and h_prev/c_prev are the forward inputs at t. Gradients
// accumulate into `grads`; dx_out/dh_prev_out/dc_prev_out receive the
// gradients flowing to the inputs.
void lstm_step_backward(const LstmCellParams& p, const LstmStepCache& cache, const Vec& x, const Vec& h_prev,
                        const Vec& c_prev, const Vec& dh, const Vec& dc, LstmGrads& grads, Vec& dx_out,
                        Vec& dh_prev_out, Vec& dc_prev_out);

// --- Adam -------------------------------------------------------------------

struct AdamHyper {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Parameters are exposed to the optimizer (and to checkpointing and gradient
// checking) as a list of views over the underlying storage, in canonical
// layer order.
struct ParamView {
    double* data = nullptr;
    std::size_t size = 0;
};

class AdamState {
public:
    AdamState(const std::vector<ParamView>& params, AdamHyper hyper);

    // One update; `grads` must mirror the construction-time shapes.
    void step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads);

    std::size_t steps_taken() const { return t_; }
    const AdamHyper& hyper() const { return hyper_; }

private:
    AdamHyper hyper_;
    std::vector<Vec> m_;
    std::vector<Vec> v_;
    std::size_t t_ = 0;
};

// --- Finite-difference gradient oracle ---------------------------------------

// Central-difference check of analytic gradients. `loss` must re-evaluate the
// scalar loss from the current parameter values each call. Samples up to
// `max_samples` parameters (all of them if fewer), chosen with `rng`.
// Relative error = |a - n| / max(|a|, |n|, 1e-8); returns the max over samples.
// eps must lie in [1e-7, 1e-3].
double finite_diff_max_rel_error(const std::vector<ParamView>& params, const std::vector<ParamView>& analytic,
                                 const std::function<double()>& loss, double eps, Rng& rng,
                                 std::size_t max_samples = 200);

std::size_t total_size(const std::vector<ParamView>& views);

}  // namespace totkit::neural
