#pragma once

#include <functional>
#include <optional>

#include "te_linalg.h"

namespace cbn {

// The trained object: L conv layers with shared pooling. Hidden layers apply
// sigma(M(w conv a + bias)); the last layer is affine, optionally followed by
// pooling when final_pool is set (constructed networks use that; trained ones
// keep the plain linear last layer).
struct Network {
  Ring ring;
  PoolingSpec pooling;
  std::vector<ConvFilter> layers;
  bool final_pool = false;
  uint64_t seed = 0;

  int depth() const { return static_cast<int>(layers.size()); }
  int c_in() const { return layers.front().c_in(); }
  int c_out() const { return layers.back().c_out(); }

  std::vector<int> widths() const {
    std::vector<int> w;
    w.push_back(c_in());
    for (const auto& l : layers) w.push_back(l.c_out());
    return w;
  }

  // ||W_l||_F^2 in the dense matrix norm (= n * filter norm).
  double weight_sq_matrix(int l) const { return ring.n() * layers[l].weight_sq_filter(); }
  // ||theta||^2 with weights and biases both in matrix norm (bias matrix 1 b^T).
  double theta_sq() const {
    double t = 0.0;
    for (const auto& l : layers) t += ring.n() * (l.weight_sq_filter() + l.bias_sq());
    return t;
  }

  void validate() const;
};

struct ForwardTrace {
  std::vector<Signal> pre;     // alpha~_l, l = 1..L
  std::vector<Signal> pooled;  // M alpha~_l for hidden layers (and final when final_pool)
  std::vector<Signal> act;     // alpha_l for l = 1..L (back() is the output)
  std::vector<Signal> mask;    // ReLU masks for hidden layers, 0/1
  double kink_margin = std::numeric_limits<double>::infinity();
  bool near_kink = false;  // some hidden pooled pre-activation within eps_kink of 0

  const Signal& output() const { return act.back(); }
};

ForwardTrace forward(const Network& net, const Signal& x);
Signal evaluate(const Network& net, const Signal& x);

// Exact Jacobian of the piecewise-linear map at x, using the trace's masks.
// near_kink (if given) reports whether x sits within eps_kink of a ReLU kink,
// where the one-sided derivative convention (mask 0 at exactly 0) applies.
MatrixXd input_jacobian(const Network& net, const Signal& x, bool* near_kink = nullptr);

// Whether every channel of x is constant across pixels (membership in the
// constant-channel probe set).
bool is_constant_channels(const Signal& x, double tol = 1e-9);

// Per-frequency blocks of Jf(x) for constant-channel x, where the ReLU masks
// are constant per channel and the Jacobian stays translationally equivariant.
// Fails if a mask is not constant along some channel.
std::vector<MatrixXcd> jf_frequency_blocks(const Network& net, const Signal& x);

enum class LossKind { mse, softmax_xent };

struct Batch {
  std::vector<Signal> X;
  std::vector<Signal> Y;    // used by mse
  std::vector<int> labels;  // used by softmax_xent
};

struct LossParts {
  double total = 0.0;
  double data = 0.0;
  double reg = 0.0;
};

// Gradient of (data loss + lambda ||theta||^2) in filter coordinates.
LossParts loss_and_gradients(const Network& net, const Batch& batch, double lambda,
                             LossKind kind, std::vector<ConvFilter>* grad);

struct TrainConfig {
  double lambda = 0.0;
  double eta = 1e-2;
  int steps = 1000;
  double momentum = 0.0;  // 0 = plain gradient descent
  uint64_t seed = 0;
  double sigma_init = 1.0;
  LossKind loss = LossKind::mse;
  int log_every = 50;
  int batch_size = 0;  // 0 = full batch; otherwise a seeded fixed subset per step
  bool freeze_bias = false;
  bool constant_final_filter = false;  // constrain the last layer to constant taps
};

struct HistoryRow {
  int step;
  double loss;
  double data_loss;
  double reg;
  double theta_sq;
  std::vector<double> layer_w_sq;  // matrix norms per layer
};

// Gaussian filter init with scale sigma/sqrt(n * c_in); zero biases.
void init_params(Network& net, double sigma_init, uint64_t seed);

std::vector<HistoryRow> train(Network& net, const Batch& data, const TrainConfig& cfg);

// Tr of the tangent kernel at x: sum_l (||alpha_{l-1}||^2 + 1) ||J(alpha~_l -> out)||_F^2.
double ntk_trace(const Network& net, const Signal& x);

// ||w_l||^2 + ||b_l||^2 - ||w_{l+1}||^2 in filter norm, l = 1..L-1.
std::vector<double> balancedness_residuals(const Network& net);

std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace cbn
