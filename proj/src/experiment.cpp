#include "experiment.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "checkpoint.h"

namespace cbn {

using nlohmann::json;

void ExperimentConfig::validate() const {
  static const char* kTasks[] = {"autoencode_bumps_1d", "mnist_classify", "mnist_zero_autoencode",
                                 "shape_pattern", "ball_trajectory"};
  bool ok = false;
  for (const char* t : kTasks) ok = ok || task == t;
  require(ok, "config: unknown task '" + task + "'");
  require(ring().valid(), "config: invalid grid dims");
  require(L >= 2, "config: need at least two layers");
  require(channels >= 1, "config: channels must be positive");
  require(lambda >= 0.0 && eta > 0.0 && steps >= 0, "config: bad optimizer settings");
  require(beta >= 0.0 && beta <= 1.0, "config: beta out of [0,1]");
  for (int d : downsample_layers)
    require(d >= 1 && d < L, "config: downsample layer index out of range");
  require(count >= 1, "config: dataset count must be positive");
  if (task == "autoencode_bumps_1d")
    require(ring().axes() == 1, "config: bump task needs a 1D grid");
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail_invalid(std::string("config: JSON parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    cfg.task = j.at("task").get<std::string>();
    if (j.contains("n")) {
      if (j["n"].is_array())
        cfg.dims = j["n"].get<std::vector<int>>();
      else
        cfg.dims = {j["n"].get<int>()};
    }
    if (j.contains("dims")) cfg.dims = j["dims"].get<std::vector<int>>();
    if (j.contains("L")) cfg.L = j["L"].get<int>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<int>();
    if (j.contains("pooling")) {
      const auto& p = j["pooling"];
      if (p.contains("kind"))
        cfg.pooling_kind = PoolingSpec::kind_from_name(p["kind"].get<std::string>());
      if (p.contains("beta")) cfg.beta = p["beta"].get<double>();
    }
    if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
    if (j.contains("eta")) cfg.eta = j["eta"].get<double>();
    if (j.contains("steps")) cfg.steps = j["steps"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("downsample_layers"))
      cfg.downsample_layers = j["downsample_layers"].get<std::vector<int>>();
    if (j.contains("count")) cfg.count = j["count"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("momentum")) cfg.momentum = j["momentum"].get<double>();
    if (j.contains("sigma_init")) cfg.sigma_init = j["sigma_init"].get<double>();
    if (j.contains("log_every")) cfg.log_every = j["log_every"].get<int>();
    if (j.contains("bump_width")) cfg.bump_width = j["bump_width"].get<int>();
    if (j.contains("bump_floor")) cfg.bump_floor = j["bump_floor"].get<double>();
    if (j.contains("mnist")) {
      const auto& m = j["mnist"];
      if (m.contains("images")) cfg.mnist_images = m["images"].get<std::string>();
      if (m.contains("labels")) cfg.mnist_labels = m["labels"].get<std::string>();
      if (m.contains("downscale")) cfg.mnist_downscale = m["downscale"].get<int>();
      if (m.contains("limit")) cfg.mnist_limit = m["limit"].get<int>();
    }
    if (j.contains("frames_in")) cfg.frames_in = j["frames_in"].get<int>();
    if (j.contains("frames_out")) cfg.frames_out = j["frames_out"].get<int>();
    if (j.contains("gravity")) cfg.gravity = j["gravity"].get<double>();
    if (j.contains("shape_max_freq")) cfg.shape_max_freq = j["shape_max_freq"].get<int>();
    if (j.contains("pattern_freq")) {
      auto v = j["pattern_freq"].get<std::vector<int>>();
      require(!v.empty(), "config: empty pattern_freq");
      cfg.pattern_freq = {v[0], v.size() > 1 ? v[1] : 0};
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail_invalid(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string config_canonical_json(const ExperimentConfig& cfg) {
  json j{{"task", cfg.task},
         {"dims", cfg.dims},
         {"L", cfg.L},
         {"channels", cfg.channels},
         {"pooling", {{"kind", PoolingSpec::kind_name(cfg.pooling_kind)}, {"beta", cfg.beta}}},
         {"lambda", cfg.lambda},
         {"eta", cfg.eta},
         {"steps", cfg.steps},
         {"seed", cfg.seed},
         {"downsample_layers", cfg.downsample_layers},
         {"count", cfg.count},
         {"batch_size", cfg.batch_size},
         {"momentum", cfg.momentum},
         {"sigma_init", cfg.sigma_init},
         {"log_every", cfg.log_every},
         {"bump_width", cfg.bump_width},
         {"bump_floor", cfg.bump_floor},
         {"mnist",
          {{"images", cfg.mnist_images},
           {"labels", cfg.mnist_labels},
           {"downscale", cfg.mnist_downscale},
           {"limit", cfg.mnist_limit}}},
         {"frames_in", cfg.frames_in},
         {"frames_out", cfg.frames_out},
         {"gravity", cfg.gravity},
         {"shape_max_freq", cfg.shape_max_freq},
         {"pattern_freq", {cfg.pattern_freq[0], cfg.pattern_freq[1]}}};
  return j.dump();
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  const std::string s = config_canonical_json(cfg);
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void Pipeline::validate() const {
  require(!segments.empty(), "pipeline: no segments");
  require(down_factors.size() + 1 == segments.size(), "pipeline: junction count mismatch");
  for (const auto& s : segments) s.validate();
  for (size_t k = 0; k + 1 < segments.size(); ++k) {
    require(segments[k].c_out() == segments[k + 1].c_in(), "pipeline: channel chain mismatch");
    require(downsampled_ring(segments[k].ring, down_factors[k]) == segments[k + 1].ring,
            "pipeline: ring chain mismatch");
  }
}

Pipeline build_pipeline(const ExperimentConfig& cfg, int c_in, int c_out) {
  std::vector<int> cuts = cfg.downsample_layers;
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  std::vector<int> widths;
  widths.push_back(c_in);
  for (int l = 1; l < cfg.L; ++l) widths.push_back(cfg.channels);
  widths.push_back(c_out);

  Pipeline pipe;
  Ring ring = cfg.ring();
  PoolingSpec pooling = pooling_operator(ring, cfg.pooling_kind, cfg.beta);
  int built = 0;
  size_t cut_at = 0;
  std::mt19937_64 seed_mix(cfg.seed);
  while (built < cfg.L) {
    const int stop = cut_at < cuts.size() ? cuts[cut_at] : cfg.L;
    Network seg;
    seg.ring = ring;
    seg.pooling = pooling;
    seg.final_pool = false;
    for (int l = built; l < stop; ++l)
      seg.layers.push_back(zero_filter(ring, widths[l + 1], widths[l]));
    init_params(seg, cfg.sigma_init, seed_mix());
    pipe.segments.push_back(std::move(seg));
    built = stop;
    if (cut_at < cuts.size()) {
      pipe.down_factors.push_back(2);
      pooling = truncate_pooling(pooling, 2);
      ring = pooling.ring;
      ++cut_at;
    }
  }
  pipe.validate();
  return pipe;
}

Signal pipeline_evaluate(const Pipeline& pipe, const Signal& x) {
  pipe.validate();
  Signal a = x;
  for (size_t k = 0; k < pipe.segments.size(); ++k) {
    const Network& seg = pipe.segments[k];
    const bool last_seg = k + 1 == pipe.segments.size();
    for (int l = 0; l < seg.depth(); ++l) {
      Signal z = cross_channel_conv(seg.ring, seg.layers[l], a);
      z.rowwise() += seg.layers[l].bias.transpose();
      if (last_seg && l + 1 == seg.depth()) {
        a = seg.final_pool ? seg.pooling.apply(z) : z;
      } else {
        a = seg.pooling.apply(z).cwiseMax(0.0);
      }
    }
    if (!last_seg) a = downsample(seg.ring, a, pipe.down_factors[k]);
  }
  return a;
}

namespace {

VectorXd broadcast_bias(int n, const VectorXd& b) {
  VectorXd bb(n * b.size());
  for (int c = 0; c < b.size(); ++c) bb.segment(c * n, n).setConstant(b(c));
  return bb;
}

struct FlatLayer {
  const Ring* ring;
  const ConvFilter* filt;
  ConvFilter* filt_mut;
  int n, c_out, c_in;
  bool output;
  int down_after;            // 1 = no junction after this layer
  std::vector<int> gather;   // big-row index per small row, when down_after > 1
  MatrixXd W;                // dense filter matrix
  MatrixXd M;                // dense pooling for c_out channels (hidden layers)
};

std::vector<FlatLayer> flatten(Pipeline& pipe) {
  std::vector<FlatLayer> flat;
  for (size_t k = 0; k < pipe.segments.size(); ++k) {
    Network& seg = pipe.segments[k];
    for (int l = 0; l < seg.depth(); ++l) {
      FlatLayer fl;
      fl.ring = &seg.ring;
      fl.filt = &seg.layers[l];
      fl.filt_mut = &seg.layers[l];
      fl.n = seg.ring.n();
      fl.c_out = seg.layers[l].c_out();
      fl.c_in = seg.layers[l].c_in();
      fl.output = (k + 1 == pipe.segments.size()) && (l + 1 == seg.depth());
      fl.down_after = 1;
      if (l + 1 == seg.depth() && k + 1 < pipe.segments.size()) {
        const int s = pipe.down_factors[k];
        fl.down_after = s;
        const Ring small = downsampled_ring(seg.ring, s);
        fl.gather.resize(small.n() * fl.c_out);
        for (int c = 0; c < fl.c_out; ++c)
          for (int f = 0; f < small.n(); ++f) {
            auto sc = small.coords(f);
            fl.gather[c * small.n() + f] = c * fl.n + seg.ring.flat(sc[0] * s, sc[1] * s);
          }
      }
      fl.W = te_matrix(seg.ring, seg.layers[l]);
      if (!fl.output) fl.M = seg.pooling.dense(fl.c_out);
      flat.push_back(std::move(fl));
    }
  }
  return flat;
}

struct PipeBatchLoss {
  double data;
  MatrixXd grad_out;
};

PipeBatchLoss pipe_data_loss(const MatrixXd& out, const Batch& batch,
                             const std::vector<int>* pick, LossKind kind, int n_out, int c_out) {
  const int B = static_cast<int>(out.cols());
  PipeBatchLoss r{0.0, MatrixXd::Zero(out.rows(), out.cols())};
  if (kind == LossKind::mse) {
    for (int b = 0; b < B; ++b) {
      const Signal& y = batch.Y[pick ? (*pick)[b] : b];
      require(y.size() == out.rows(), "pipeline targets must live on the output grid");
      VectorXd diff = out.col(b) - Eigen::Map<const VectorXd>(y.data(), y.size());
      r.data += diff.squaredNorm() / B;
      r.grad_out.col(b) = 2.0 / B * diff;
    }
  } else {
    for (int b = 0; b < B; ++b) {
      const int label = batch.labels[pick ? (*pick)[b] : b];
      VectorXd logits(c_out);
      for (int k = 0; k < c_out; ++k) logits(k) = out.col(b).segment(k * n_out, n_out).mean();
      const double zmax = logits.maxCoeff();
      VectorXd ex = (logits.array() - zmax).exp();
      const double Z = ex.sum();
      r.data += (std::log(Z) - (logits(label) - zmax)) / B;
      VectorXd p = ex / Z;
      p(label) -= 1.0;
      for (int k = 0; k < c_out; ++k)
        r.grad_out.col(b).segment(k * n_out, n_out).setConstant(p(k) / (B * n_out));
    }
  }
  return r;
}

void reduce_to_taps_ring(const Ring& ring, const MatrixXd& gW, ConvFilter* g) {
  const int n = ring.n();
  for (auto& t : g->taps) t.setZero();
  for (int k = 0; k < g->c_out(); ++k)
    for (int s = 0; s < g->c_in(); ++s)
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) g->taps[ring.sub(q, p)](k, s) += gW(k * n + p, s * n + q);
}

void project_constant(ConvFilter* f) {
  MatrixXd mean = MatrixXd::Zero(f->c_out(), f->c_in());
  for (const auto& tap : f->taps) mean += tap;
  mean /= static_cast<double>(f->taps.size());
  for (auto& tap : f->taps) tap = mean;
}

LossParts pipe_loss_grad(Pipeline& pipe, std::vector<FlatLayer>& flat, const Batch& batch,
                         const std::vector<int>* pick, double lambda, LossKind kind,
                         std::vector<ConvFilter>* grad) {
  const size_t count = pick ? pick->size() : batch.X.size();
  require(count > 0, "pipeline: empty batch");
  for (auto& fl : flat) fl.W = te_matrix(*fl.ring, *fl.filt);

  MatrixXd A(flat.front().n * flat.front().c_in, count);
  for (size_t b = 0; b < count; ++b) {
    const Signal& s = batch.X[pick ? (*pick)[b] : b];
    A.col(b) = Eigen::Map<const VectorXd>(s.data(), s.size());
  }

  std::vector<MatrixXd> acts;  // input of each layer
  std::vector<MatrixXd> masks;
  acts.push_back(A);
  MatrixXd out;
  for (size_t l = 0; l < flat.size(); ++l) {
    FlatLayer& fl = flat[l];
    MatrixXd Z = fl.W * acts.back();
    Z.colwise() += broadcast_bias(fl.n, fl.filt->bias);
    if (fl.output) {
      out = Z;
      break;
    }
    MatrixXd P = fl.M * Z;
    masks.push_back((P.array() > 0.0).cast<double>().matrix());
    MatrixXd act = P.cwiseMax(0.0);
    if (fl.down_after > 1) {
      MatrixXd small(static_cast<int>(fl.gather.size()), act.cols());
      for (size_t r = 0; r < fl.gather.size(); ++r) small.row(r) = act.row(fl.gather[r]);
      acts.push_back(std::move(small));
    } else {
      acts.push_back(std::move(act));
    }
  }

  const FlatLayer& last = flat.back();
  PipeBatchLoss bl = pipe_data_loss(out, batch, pick, kind, last.n, last.c_out);
  LossParts parts;
  parts.data = bl.data;
  parts.reg = lambda * pipe.theta_sq();
  parts.total = parts.data + parts.reg;
  if (!std::isfinite(parts.total)) fail_runtime("pipeline: non-finite loss");
  if (!grad) return parts;

  grad->clear();
  for (const auto& fl : flat) grad->push_back(zero_filter(*fl.ring, fl.c_out, fl.c_in));

  MatrixXd Gz = bl.grad_out;
  for (int l = static_cast<int>(flat.size()) - 1; l >= 0; --l) {
    FlatLayer& fl = flat[l];
    MatrixXd gW = Gz * acts[l].transpose();
    reduce_to_taps_ring(*fl.ring, gW, &(*grad)[l]);
    for (int k = 0; k < fl.c_out; ++k) (*grad)[l].bias(k) = Gz.middleRows(k * fl.n, fl.n).sum();
    if (l > 0) {
      MatrixXd GA = fl.W.transpose() * Gz;
      FlatLayer& prev = flat[l - 1];
      MatrixXd G_big;
      if (prev.down_after > 1) {
        G_big = MatrixXd::Zero(prev.n * prev.c_out, GA.cols());
        for (size_t r = 0; r < prev.gather.size(); ++r) G_big.row(prev.gather[r]) = GA.row(r);
      } else {
        G_big = std::move(GA);
      }
      MatrixXd Gp = G_big.cwiseProduct(masks[l - 1]);
      Gz = prev.M.transpose() * Gp;
    }
  }
  for (size_t l = 0; l < flat.size(); ++l) {
    const FlatLayer& fl = flat[l];
    for (int j = 0; j < fl.n; ++j)
      (*grad)[l].taps[j] += 2.0 * lambda * fl.n * fl.filt->taps[j];
    (*grad)[l].bias += 2.0 * lambda * fl.n * fl.filt->bias;
  }
  return parts;
}

}  // namespace

std::vector<HistoryRow> pipeline_train(Pipeline& pipe, const Batch& data, const TrainConfig& cfg) {
  pipe.validate();
  if (pipe.single()) return train(pipe.segments[0], data, cfg);
  require(cfg.eta > 0.0 && cfg.lambda >= 0.0 && cfg.steps >= 0, "pipeline_train: bad settings");
  std::vector<FlatLayer> flat = flatten(pipe);
  if (cfg.constant_final_filter) project_constant(flat.back().filt_mut);

  std::vector<HistoryRow> history;
  std::vector<ConvFilter> grad, vel;
  for (const auto& fl : flat) vel.push_back(zero_filter(*fl.ring, fl.c_out, fl.c_in));

  std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  const int N = static_cast<int>(data.X.size());
  std::vector<int> pick;

  auto log_row = [&](int step, const LossParts& parts) {
    HistoryRow row;
    row.step = step;
    row.loss = parts.total;
    row.data_loss = parts.data;
    row.reg = parts.reg;
    row.theta_sq = pipe.theta_sq();
    for (const auto& fl : flat)
      row.layer_w_sq.push_back(fl.n * fl.filt->weight_sq_filter());
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
    LossParts parts = pipe_loss_grad(pipe, flat, data, pick_ptr, cfg.lambda, cfg.loss, &grad);
    if (!std::isfinite(parts.total) || parts.total > 1e12)
      fail_runtime("pipeline_train: divergence at step " + std::to_string(step));
    if (cfg.freeze_bias)
      for (auto& g : grad) g.bias.setZero();
    if (cfg.constant_final_filter) project_constant(&grad.back());
    for (size_t l = 0; l < flat.size(); ++l) {
      for (int j = 0; j < flat[l].n; ++j) {
        vel[l].taps[j] = cfg.momentum * vel[l].taps[j] - cfg.eta * grad[l].taps[j];
        flat[l].filt_mut->taps[j] += vel[l].taps[j];
      }
      vel[l].bias = cfg.momentum * vel[l].bias - cfg.eta * grad[l].bias;
      flat[l].filt_mut->bias += vel[l].bias;
    }
    if (step % std::max(1, cfg.log_every) == 0) log_row(step, parts);
  }
  LossParts final_parts = pipe_loss_grad(pipe, flat, data, nullptr, cfg.lambda, cfg.loss, nullptr);
  log_row(cfg.steps, final_parts);
  return history;
}

std::string pipeline_spectrum_csv(const Pipeline& pipe) {
  std::ostringstream os;
  int offset = 0;
  bool first = true;
  for (const auto& seg : pipe.segments) {
    auto rows = layer_spectrum_report(seg);
    for (auto& r : rows) r.layer += offset;
    std::string csv = spectrum_csv(seg.ring, rows);
    if (!first) csv = csv.substr(csv.find('\n') + 1);
    os << csv;
    first = false;
    offset += seg.depth();
  }
  return os.str();
}

std::vector<Signal> constant_probe_grid(const Ring& ring, int channels) {
  std::vector<Signal> probes;
  for (double v : {-1.0, -0.5, 0.1, 0.5, 1.0})
    probes.push_back(Signal::Constant(ring.n(), channels, v));
  return probes;
}

std::vector<Signal> dataset_mean_probes(const Dataset& data, int max_count) {
  std::vector<Signal> probes;
  const int count = std::min<int>(max_count, static_cast<int>(data.size()));
  for (int i = 0; i < count; ++i) {
    Signal probe(data.ring.n(), data.channels);
    for (int c = 0; c < data.channels; ++c)
      probe.col(c).setConstant(data.inputs[i].col(c).mean());
    probes.push_back(std::move(probe));
  }
  return probes;
}

namespace {

json to_json_finite(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

bool pooling_effectively_off(const PoolingSpec& p) {
  VectorXd delta = VectorXd::Zero(p.ring.n());
  delta(0) = 1.0;
  return (p.m - delta).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

std::string bounds_report_json(const Network& net, const std::vector<Signal>& probes) {
  net.validate();
  require(!probes.empty(), "bounds_report_json: no probes");
  const int L = net.depth();
  json rep;
  rep["tau_rank"] = kTauRank;
  rep["theta_sq"] = net.theta_sq();
  rep["depth"] = L;
  rep["theta_sq_over_depth"] = net.theta_sq() / L;
  rep["pooling_m_bar"] = net.pooling.M_bar;

  JacobianBounds jb = jacobian_lower_bounds(net, probes, kTauRank);
  json jac;
  jac["general"] = {{"value", jb.bound_general},
                    {"probe", jb.general_probe},
                    {"normalization", "rank / max(m_tilde_max^2, 1)"}};
  if (jb.has_constant) {
    jac["constant"] = {{"value", to_json_finite(jb.bound_constant)},
                       {"infinite", jb.constant_infinite},
                       {"probe", jb.constant_probe}};
  } else {
    jac["constant"] = {{"absent_reason", jb.constant_absent_reason}};
  }
  jac["skipped_kink_probes"] = jb.skipped_kink_probes;
  rep["rank_lower_bounds"] = jac;

  if (jb.has_constant && !jb.constant_infinite) {
    const Signal& x0 = probes[jb.constant_probe];
    FreqSVD jsvd = jf_freq_svd(net, x0);
    rep["finite_depth_lower"] = {{"value", r1_lower_bound(jsvd, net.pooling, kTauRank)},
                                 {"probe", jb.constant_probe}};
    WeightBottleneck wb = weight_bottleneck_residual(net, x0, kTauRank);
    json w;
    w["kappa"] = wb.kappa;
    w["rank_m_jf"] = wb.rank_m_jf;
    w["c1"] = wb.c1;
    w["log_term"] = wb.log_term;
    w["rhs"] = wb.rhs;
    w["lhs"] = wb.lhs;
    w["holds"] = wb.holds;
    w["degenerate"] = wb.degenerate;
    w["residual_per_layer"] = wb.residual_per_layer;
    w["retained_per_frequency"] = wb.retained_per_freq;
    w["replacement_singular_values"] = wb.s_entries_abs;
    for (size_t i = 0; i < kCorollaryPs.size(); ++i) {
      json c;
      c["p"] = kCorollaryPs[i];
      c["fraction_within"] = wb.fraction_within[i];
      c["holds"] = wb.corollary_holds[i];
      w["layer_fractions"].push_back(c);
    }
    rep["weight_residual_bound"] = w;
  } else {
    rep["finite_depth_lower"] = {{"skipped_reason", "no usable constant-channel probe"}};
    rep["weight_residual_bound"] = {{"skipped_reason", "no usable constant-channel probe"}};
  }

  if (pooling_effectively_off(net.pooling)) {
    if (jb.general_probe >= 0) {
      const Signal& x0 = probes[jb.general_probe];
      const double c_ntk = ntk_trace(net, x0) / L;
      ActivationRecord ar = activation_profile(net, x0, c_ntk, kTauRank);
      json a;
      a["activation_sq_per_layer"] = ar.act_sq;
      a["sum"] = ar.sum_act_sq;
      a["k"] = ar.k;
      a["c_ntk"] = ar.c;
      a["c1"] = ar.c1;
      a["pseudo_det"] = ar.pdet;
      a["rhs_total"] = to_json_finite(ar.rhs_total);
      a["rhs_total_conservative"] = to_json_finite(ar.rhs_total_general);
      a["holds"] = ar.holds;
      a["degenerate"] = ar.degenerate;
      for (size_t i = 0; i < ar.profile_ps.size(); ++i) {
        json pr;
        pr["p"] = ar.profile_ps[i];
        pr["per_layer_threshold"] = to_json_finite(ar.per_layer_threshold[i]);
        pr["fraction_below"] = ar.fraction_below[i];
        a["profiles"].push_back(pr);
      }
      a["balance_residuals"] = ar.balance_residuals;
      a["balance_ok"] = ar.balance_ok;
      a["probe"] = jb.general_probe;
      rep["activation_bound"] = a;
    } else {
      rep["activation_bound"] = {{"skipped_reason", "all probes sat near ReLU kinks"}};
    }
  } else {
    rep["activation_bound"] = {{"skipped_reason", "pooling present; bound applies without pooling"}};
  }
  return rep.dump(2) + "\n";
}

namespace {

struct TaskSetup {
  Dataset data;
  Batch batch;
  LossKind loss = LossKind::mse;
  int c_in = 1;
  int c_out = 1;
  bool constant_head = false;
  bool fallback = false;
  Ring ring;
};

TaskSetup prepare_task(const ExperimentConfig& cfg) {
  TaskSetup t;
  t.ring = cfg.ring();
  if (cfg.task == "autoencode_bumps_1d") {
    t.data = gen_translated_bumps(cfg.count, t.ring, cfg.bump_width, cfg.seed, cfg.bump_floor);
    t.batch.X = t.data.inputs;
    t.batch.Y = t.data.targets;
  } else if (cfg.task == "mnist_classify" || cfg.task == "mnist_zero_autoencode") {
    const bool classify = cfg.task == "mnist_classify";
    bool have_files = !cfg.mnist_images.empty() && !cfg.mnist_labels.empty() &&
                      std::ifstream(cfg.mnist_images).good() &&
                      std::ifstream(cfg.mnist_labels).good();
    if (have_files) {
      t.data = load_mnist_idx(cfg.mnist_images, cfg.mnist_labels, classify ? -1 : 0,
                              cfg.mnist_downscale);
      t.ring = t.data.ring;
      if (cfg.mnist_limit > 0 && t.data.size() > static_cast<size_t>(cfg.mnist_limit)) {
        t.data.inputs.resize(cfg.mnist_limit);
        if (!t.data.labels.empty()) t.data.labels.resize(cfg.mnist_limit);
      }
      t.batch.X = t.data.inputs;
      if (classify) {
        t.batch.labels = t.data.labels;
        t.loss = LossKind::softmax_xent;
        t.c_out = 10;
        t.constant_head = true;
      } else {
        t.batch.Y = t.data.inputs;
      }
    } else if (classify) {
      // Parity-of-position stand-in when the image files are not available.
      t.fallback = true;
      t.ring = t.ring.axes() == 1 ? t.ring : Ring::d1(16);
      t.data = gen_translated_bumps(cfg.count, t.ring, cfg.bump_width, cfg.seed, cfg.bump_floor);
      t.batch.X = t.data.inputs;
      for (int pos : t.data.labels) t.batch.labels.push_back(pos % 2);
      t.data.labels = t.batch.labels;
      t.loss = LossKind::softmax_xent;
      t.c_out = 2;
      t.constant_head = true;
    } else {
      fail_invalid("mnist files not found (images='" + cfg.mnist_images + "')");
    }
  } else if (cfg.task == "shape_pattern") {
    t.data = gen_shape_pattern(cfg.count, t.ring, cfg.shape_max_freq, cfg.pattern_freq, cfg.seed);
    t.batch.X = t.data.inputs;
    t.batch.Y = t.data.targets;
  } else if (cfg.task == "ball_trajectory") {
    t.data = gen_ball_trajectory(cfg.count, t.ring, cfg.frames_in, cfg.frames_out, cfg.gravity,
                                 cfg.seed);
    t.c_in = cfg.frames_in;
    t.c_out = cfg.frames_out;
    t.batch.X = t.data.inputs;
    t.batch.Y = t.data.targets;
  } else {
    fail_invalid("unknown task " + cfg.task);
  }
  // Reduction stages shrink the output grid; regression targets follow it.
  if (t.loss == LossKind::mse && !cfg.downsample_layers.empty()) {
    std::vector<int> cuts = cfg.downsample_layers;
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (auto& y : t.batch.Y) {
      Ring r = t.ring;
      for (size_t k = 0; k < cuts.size(); ++k) {
        y = downsample(r, y, 2);
        r = downsampled_ring(r, 2);
      }
    }
  }
  return t;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  json manifest;
  manifest["format"] = "cbn-experiment";
  manifest["version"] = 1;
  manifest["task"] = cfg.task;
  manifest["config"] = json::parse(config_canonical_json(cfg));
  manifest["config_hash"] = config_hash_hex(cfg);
  manifest["code_version"] = "1.0.0";
  if (!cfg.downsample_layers.empty())
    manifest["resampler"] = "fourier_subsample";  // offset-0 pixel subsampling stages

  ExperimentResult result;
  result.cfg = cfg;
  result.out_dir = out_dir;
  try {
    TaskSetup task = prepare_task(cfg);
    result.used_fallback = task.fallback;
    manifest["fallback"] = task.fallback;
    manifest["dataset"] = {{"source", task.data.source},
                           {"params", json::parse(task.data.params_json)},
                           {"count", task.data.size()}};

    ExperimentConfig eff = cfg;
    eff.dims = task.ring.dims;
    Pipeline pipe = build_pipeline(eff, task.c_in, task.c_out);

    TrainConfig tc;
    tc.lambda = cfg.lambda;
    tc.eta = cfg.eta;
    tc.steps = cfg.steps;
    tc.momentum = cfg.momentum;
    tc.seed = cfg.seed;
    tc.sigma_init = cfg.sigma_init;
    tc.loss = task.loss;
    tc.log_every = cfg.log_every;
    tc.batch_size = cfg.batch_size;
    tc.constant_final_filter = task.constant_head;
    result.history = pipeline_train(pipe, task.batch, tc);
    result.final_loss = result.history.back().loss;
    result.final_data_loss = result.history.back().data_loss;

    std::vector<std::string> model_files;
    if (pipe.single()) {
      save_checkpoint(pipe.segments[0], (fs::path(out_dir) / "model.cbn").string());
      model_files.push_back("model.cbn");
    } else {
      for (size_t k = 0; k < pipe.segments.size(); ++k) {
        std::string name = "model_segment_" + std::to_string(k) + ".cbn";
        save_checkpoint(pipe.segments[k], (fs::path(out_dir) / name).string());
        model_files.push_back(name);
      }
    }
    manifest["artifacts"] = {{"model", model_files},
                             {"history", "history.csv"},
                             {"spectrum", "spectrum.csv"},
                             {"bounds", "bounds.json"}};
    if (!pipe.single()) manifest["down_factors"] = pipe.down_factors;

    write_text(fs::path(out_dir) / "history.csv", history_csv(result.history));
    write_text(fs::path(out_dir) / "spectrum.csv", pipeline_spectrum_csv(pipe));

    if (pipe.single()) {
      std::vector<Signal> probes = constant_probe_grid(pipe.in_ring(), pipe.c_in());
      for (auto& p : dataset_mean_probes(task.data, 8)) probes.push_back(std::move(p));
      write_text(fs::path(out_dir) / "bounds.json",
                 bounds_report_json(pipe.segments[0], probes));
    } else {
      json skipped = {{"skipped_reason",
                       "resampling pipeline: the rank and residual bounds apply to a "
                       "single-grid network"},
                      {"tau_rank", kTauRank}};
      write_text(fs::path(out_dir) / "bounds.json", skipped.dump(2) + "\n");
    }

    manifest["status"] = "ok";
    manifest["final_loss"] = result.final_loss;
    manifest["final_data_loss"] = result.final_data_loss;
    write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    result.model = std::move(pipe);
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    throw;
  }
  return result;
}

}  // namespace cbn
