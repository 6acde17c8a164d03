#include "network.h"

#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace cbn {

void Network::validate() const {
  require(ring.valid(), "network: invalid ring");
  require(!layers.empty(), "network: no layers");
  require(pooling.ring == ring, "network: pooling ring mismatch");
  for (size_t l = 0; l < layers.size(); ++l) {
    require(static_cast<int>(layers[l].taps.size()) == ring.n(), "network: tap count mismatch");
    require(layers[l].bias.size() == layers[l].c_out(), "network: bias size mismatch");
    if (l > 0)
      require(layers[l].c_in() == layers[l - 1].c_out(), "network: channel chain mismatch");
  }
}

namespace {

VectorXd broadcast_bias(int n, const VectorXd& b) {
  VectorXd bb(n * b.size());
  for (int c = 0; c < b.size(); ++c) bb.segment(c * n, n).setConstant(b(c));
  return bb;
}

}  // namespace

ForwardTrace forward(const Network& net, const Signal& x) {
  require(x.rows() == net.ring.n() && x.cols() == net.c_in(), "forward: input shape mismatch");
  ForwardTrace tr;
  const int L = net.depth();
  Signal a = x;
  for (int l = 0; l < L; ++l) {
    Signal pre = cross_channel_conv(net.ring, net.layers[l], a);
    pre.rowwise() += net.layers[l].bias.transpose();
    tr.pre.push_back(pre);
    const bool hidden = l + 1 < L;
    if (hidden || net.final_pool) {
      Signal pooled = net.pooling.apply(pre);
      tr.pooled.push_back(pooled);
      if (hidden) {
        tr.kink_margin = std::min(tr.kink_margin, pooled.cwiseAbs().minCoeff());
        Signal mask = (pooled.array() > 0.0).cast<double>();
        tr.mask.push_back(mask);
        a = pooled.cwiseMax(0.0);
      } else {
        a = pooled;
      }
    } else {
      a = pre;
    }
    tr.act.push_back(a);
  }
  tr.near_kink = tr.kink_margin < kEpsKink;
  return tr;
}

Signal evaluate(const Network& net, const Signal& x) { return forward(net, x).output(); }

MatrixXd input_jacobian(const Network& net, const Signal& x, bool* near_kink) {
  ForwardTrace tr = forward(net, x);
  if (near_kink) *near_kink = tr.near_kink;
  const int L = net.depth();
  const int n = net.ring.n();
  MatrixXd J = te_matrix(net.ring, net.layers[L - 1]);
  if (net.final_pool) J = net.pooling.dense(net.layers[L - 1].c_out()) * J;
  for (int l = L - 2; l >= 0; --l) {
    const Signal& mask = tr.mask[l];
    VectorXd d(Eigen::Map<const VectorXd>(mask.data(), mask.size()));
    MatrixXd MW = net.pooling.dense(net.layers[l].c_out()) * te_matrix(net.ring, net.layers[l]);
    J = J * d.asDiagonal() * MW;
  }
  (void)n;
  return J;
}

bool is_constant_channels(const Signal& x, double tol) {
  for (int c = 0; c < x.cols(); ++c) {
    if (x.col(c).maxCoeff() - x.col(c).minCoeff() > tol) return false;
  }
  return true;
}

std::vector<MatrixXcd> jf_frequency_blocks(const Network& net, const Signal& x) {
  require(is_constant_channels(x), "jf_frequency_blocks: input must be constant along channels");
  ForwardTrace tr = forward(net, x);
  const int L = net.depth();
  const int n = net.ring.n();
  // Per-channel mask values; constant-channel inputs give exactly constant masks.
  std::vector<VectorXd> d(L - 1);
  for (int l = 0; l + 1 < L; ++l) {
    const Signal& mask = tr.mask[l];
    d[l] = mask.row(0).transpose();
    for (int i = 1; i < mask.rows(); ++i)
      require((mask.row(i).transpose() - d[l]).cwiseAbs().maxCoeff() == 0.0,
              "jf_frequency_blocks: mask not constant along a channel");
  }
  std::vector<std::vector<MatrixXcd>> layer_blocks(L);
  for (int l = 0; l < L; ++l) layer_blocks[l] = frequency_blocks(net.ring, net.layers[l]);
  std::vector<MatrixXcd> out(n);
  for (int t = 0; t < n; ++t) {
    MatrixXcd B = layer_blocks[L - 1][t];
    if (net.final_pool) B = net.pooling.m_tilde(t) * B;
    for (int l = L - 2; l >= 0; --l) {
      B = B * d[l].cast<cplx>().asDiagonal();
      B = B * (net.pooling.m_tilde(t) * layer_blocks[l][t]);
    }
    out[t] = B;
  }
  return out;
}

namespace {

struct DenseStack {
  std::vector<MatrixXd> W;        // dense layer matrices
  std::map<int, MatrixXd> M_by_c; // dense pooling per channel count

  const MatrixXd& pool(const Network& net, int channels) {
    auto it = M_by_c.find(channels);
    if (it == M_by_c.end())
      it = M_by_c.emplace(channels, net.pooling.dense(channels)).first;
    return it->second;
  }

  void build(const Network& net) {
    W.clear();
    for (const auto& layer : net.layers) W.push_back(te_matrix(net.ring, layer));
  }
};

MatrixXd pack_batch(const Ring& ring, const std::vector<Signal>& sigs,
                    const std::vector<int>* pick) {
  const size_t count = pick ? pick->size() : sigs.size();
  require(count > 0, "empty batch");
  const auto& first = sigs[pick ? (*pick)[0] : 0];
  MatrixXd A(first.size(), count);
  for (size_t i = 0; i < count; ++i) {
    const Signal& s = sigs[pick ? (*pick)[i] : i];
    A.col(i) = Eigen::Map<const VectorXd>(s.data(), s.size());
  }
  return A;
}

// Reduce a dense weight-matrix gradient onto the filter taps it came from.
void reduce_to_taps(const Ring& ring, const MatrixXd& gW, ConvFilter* g) {
  const int n = ring.n();
  const int co = g->c_out(), ci = g->c_in();
  for (int j = 0; j < n; ++j) g->taps[j].setZero();
  for (int k = 0; k < co; ++k)
    for (int s = 0; s < ci; ++s)
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) g->taps[ring.sub(q, p)](k, s) += gW(k * n + p, s * n + q);
}

struct BatchLoss {
  double data;
  MatrixXd grad_out;  // dL_data/d(out), packed like the batch
};

BatchLoss data_loss(const MatrixXd& out, const Batch& batch, const std::vector<int>* pick,
                    LossKind kind, const Ring& ring, int c_out) {
  const int B = static_cast<int>(out.cols());
  BatchLoss r{0.0, MatrixXd::Zero(out.rows(), out.cols())};
  if (kind == LossKind::mse) {
    for (int b = 0; b < B; ++b) {
      const Signal& y = batch.Y[pick ? (*pick)[b] : b];
      VectorXd diff = out.col(b) - Eigen::Map<const VectorXd>(y.data(), y.size());
      r.data += diff.squaredNorm() / B;
      r.grad_out.col(b) = 2.0 / B * diff;
    }
  } else {
    const int n = ring.n();
    for (int b = 0; b < B; ++b) {
      const int label = batch.labels[pick ? (*pick)[b] : b];
      VectorXd logits(c_out);
      for (int k = 0; k < c_out; ++k) logits(k) = out.col(b).segment(k * n, n).mean();
      const double zmax = logits.maxCoeff();
      VectorXd ex = (logits.array() - zmax).exp();
      const double Z = ex.sum();
      r.data += (std::log(Z) - (logits(label) - zmax)) / B;
      VectorXd p = ex / Z;
      p(label) -= 1.0;
      for (int k = 0; k < c_out; ++k)
        r.grad_out.col(b).segment(k * n, n).setConstant(p(k) / (B * n));
    }
  }
  return r;
}

LossParts loss_and_gradients_picked(const Network& net, const Batch& batch,
                                    const std::vector<int>* pick, double lambda, LossKind kind,
                                    std::vector<ConvFilter>* grad) {
  net.validate();
  const int L = net.depth();
  const int n = net.ring.n();
  DenseStack ds;
  ds.build(net);

  MatrixXd A = pack_batch(net.ring, batch.X, pick);
  std::vector<MatrixXd> acts;  // A_0..A_{L-1}
  std::vector<MatrixXd> masks; // hidden layers
  acts.push_back(A);
  MatrixXd Z;
  for (int l = 0; l < L; ++l) {
    Z = ds.W[l] * acts.back();
    Z.colwise() += broadcast_bias(n, net.layers[l].bias);
    if (l + 1 < L) {
      MatrixXd P = ds.pool(net, net.layers[l].c_out()) * Z;
      masks.push_back((P.array() > 0.0).cast<double>().matrix());
      acts.push_back(P.cwiseMax(0.0));
    }
  }
  MatrixXd out = net.final_pool ? MatrixXd(ds.pool(net, net.layers[L - 1].c_out()) * Z) : Z;

  BatchLoss bl = data_loss(out, batch, pick, kind, net.ring, net.layers[L - 1].c_out());
  LossParts parts;
  parts.data = bl.data;
  parts.reg = lambda * net.theta_sq();
  parts.total = parts.data + parts.reg;
  if (!std::isfinite(parts.total))
    fail_runtime("loss_and_gradients: non-finite loss (data=" + std::to_string(parts.data) + ")");
  if (!grad) return parts;

  grad->clear();
  for (const auto& layer : net.layers) grad->push_back(zero_filter(net.ring, layer.c_out(), layer.c_in()));

  MatrixXd Gz = net.final_pool
                    ? MatrixXd(ds.pool(net, net.layers[L - 1].c_out()).transpose() * bl.grad_out)
                    : bl.grad_out;
  for (int l = L - 1; l >= 0; --l) {
    MatrixXd gW = Gz * acts[l].transpose();
    reduce_to_taps(net.ring, gW, &(*grad)[l]);
    VectorXd gb = VectorXd::Zero(net.layers[l].c_out());
    for (int k = 0; k < net.layers[l].c_out(); ++k)
      gb(k) = Gz.middleRows(k * n, n).sum();
    (*grad)[l].bias = gb;
    if (l > 0) {
      MatrixXd GA = ds.W[l].transpose() * Gz;
      MatrixXd Gp = GA.cwiseProduct(masks[l - 1]);
      Gz = ds.pool(net, net.layers[l - 1].c_out()).transpose() * Gp;
    }
  }
  // Explicit weight-decay term, matrix norm: d(lambda n (||w||^2+||b||^2)).
  for (int l = 0; l < L; ++l) {
    for (int j = 0; j < n; ++j) (*grad)[l].taps[j] += 2.0 * lambda * n * net.layers[l].taps[j];
    (*grad)[l].bias += 2.0 * lambda * n * net.layers[l].bias;
  }
  return parts;
}

}  // namespace

LossParts loss_and_gradients(const Network& net, const Batch& batch, double lambda, LossKind kind,
                             std::vector<ConvFilter>* grad) {
  require(!batch.X.empty(), "loss_and_gradients: empty batch");
  if (kind == LossKind::mse)
    require(batch.Y.size() == batch.X.size(), "loss_and_gradients: target count mismatch");
  else
    require(batch.labels.size() == batch.X.size(), "loss_and_gradients: label count mismatch");
  return loss_and_gradients_picked(net, batch, nullptr, lambda, kind, grad);
}

void init_params(Network& net, double sigma_init, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = net.ring.n();
  for (auto& layer : net.layers) {
    const double scale = sigma_init / std::sqrt(static_cast<double>(n) * layer.c_in());
    for (auto& tap : layer.taps)
      for (int k = 0; k < tap.rows(); ++k)
        for (int s = 0; s < tap.cols(); ++s) tap(k, s) = scale * gauss(rng);
    layer.bias.setZero();
  }
  net.seed = seed;
}

namespace {

void project_constant_taps(ConvFilter* f) {
  MatrixXd mean = MatrixXd::Zero(f->c_out(), f->c_in());
  for (const auto& tap : f->taps) mean += tap;
  mean /= static_cast<double>(f->taps.size());
  for (auto& tap : f->taps) tap = mean;
}

}  // namespace

std::vector<HistoryRow> train(Network& net, const Batch& data, const TrainConfig& cfg) {
  require(cfg.eta > 0.0, "train: eta must be positive");
  require(cfg.lambda >= 0.0, "train: lambda must be nonnegative");
  require(cfg.steps >= 0, "train: negative step count");
  net.validate();
  if (cfg.constant_final_filter) project_constant_taps(&net.layers.back());

  std::vector<HistoryRow> history;
  std::vector<ConvFilter> grad, vel;
  for (const auto& layer : net.layers) vel.push_back(zero_filter(net.ring, layer.c_out(), layer.c_in()));

  std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  const int N = static_cast<int>(data.X.size());
  std::vector<int> pick;

  auto log_row = [&](int step, const LossParts& parts) {
    HistoryRow row;
    row.step = step;
    row.loss = parts.total;
    row.data_loss = parts.data;
    row.reg = parts.reg;
    row.theta_sq = net.theta_sq();
    for (int l = 0; l < net.depth(); ++l) row.layer_w_sq.push_back(net.weight_sq_matrix(l));
    history.push_back(row);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const std::vector<int>* pick_ptr = nullptr;
    if (cfg.batch_size > 0 && cfg.batch_size < N) {
      pick.resize(cfg.batch_size);
      for (int i = 0; i < cfg.batch_size; ++i)
        pick[i] = static_cast<int>(batch_rng() % static_cast<uint64_t>(N));
      pick_ptr = &pick;
    }
    LossParts parts = loss_and_gradients_picked(net, data, pick_ptr, cfg.lambda, cfg.loss, &grad);
    if (!std::isfinite(parts.total) || parts.total > 1e12)
      fail_runtime("train: divergence at step " + std::to_string(step) +
                   " (loss=" + std::to_string(parts.total) + ")");
    if (cfg.freeze_bias)
      for (auto& g : grad) g.bias.setZero();
    if (cfg.constant_final_filter) project_constant_taps(&grad.back());
    for (int l = 0; l < net.depth(); ++l) {
      for (int j = 0; j < net.ring.n(); ++j) {
        vel[l].taps[j] = cfg.momentum * vel[l].taps[j] - cfg.eta * grad[l].taps[j];
        net.layers[l].taps[j] += vel[l].taps[j];
      }
      vel[l].bias = cfg.momentum * vel[l].bias - cfg.eta * grad[l].bias;
      net.layers[l].bias += vel[l].bias;
    }
    if (step % std::max(1, cfg.log_every) == 0) log_row(step, parts);
  }
  LossParts final_parts = loss_and_gradients_picked(net, data, nullptr, cfg.lambda, cfg.loss, nullptr);
  log_row(cfg.steps, final_parts);
  return history;
}

double ntk_trace(const Network& net, const Signal& x) {
  ForwardTrace tr = forward(net, x);
  const int L = net.depth();
  const int nc_out = net.ring.n() * net.c_out();
  MatrixXd J = net.final_pool ? net.pooling.dense(net.c_out())
                              : MatrixXd(MatrixXd::Identity(nc_out, nc_out));
  double total = 0.0;
  for (int l = L - 1; l >= 0; --l) {
    const Signal& a_prev = (l == 0) ? x : tr.act[l - 1];
    total += (a_prev.squaredNorm() + 1.0) * J.squaredNorm();
    if (l > 0) {
      const Signal& mask = tr.mask[l - 1];
      VectorXd d(Eigen::Map<const VectorXd>(mask.data(), mask.size()));
      J = J * te_matrix(net.ring, net.layers[l]) * d.asDiagonal() *
          net.pooling.dense(net.layers[l - 1].c_out());
    }
  }
  return total;
}

std::vector<double> balancedness_residuals(const Network& net) {
  require(net.depth() >= 2, "balancedness_residuals: need at least two layers");
  std::vector<double> r;
  for (int l = 0; l + 1 < net.depth(); ++l)
    r.push_back(net.layers[l].weight_sq_filter() + net.layers[l].bias_sq() -
                net.layers[l + 1].weight_sq_filter());
  return r;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,data_loss,reg,theta_sq";
  if (!history.empty())
    for (size_t l = 0; l < history[0].layer_w_sq.size(); ++l) os << ",w_sq_layer" << l + 1;
  os << "\n";
  for (const auto& row : history) {
    os << row.step << "," << row.loss << "," << row.data_loss << "," << row.reg << ","
       << row.theta_sq;
    for (double w : row.layer_w_sq) os << "," << w;
    os << "\n";
  }
  return os.str();
}

}  // namespace cbn
