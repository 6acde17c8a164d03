#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "checkpoint.h"
#include "network.h"

using namespace cbn;

namespace {

std::mt19937_64 g_rng(21);

ConvFilter random_filter(const Ring& ring, int c_out, int c_in) {
  std::normal_distribution<double> g(0.0, 1.0);
  ConvFilter f = zero_filter(ring, c_out, c_in);
  for (auto& tap : f.taps)
    for (int r = 0; r < tap.rows(); ++r)
      for (int c = 0; c < tap.cols(); ++c) tap(r, c) = g(g_rng);
  for (int k = 0; k < c_out; ++k) f.bias(k) = g(g_rng);
  return f;
}

Signal random_signal(const Ring& ring, int channels) {
  std::normal_distribution<double> g(0.0, 1.0);
  Signal x(ring.n(), channels);
  for (int i = 0; i < x.rows(); ++i)
    for (int c = 0; c < channels; ++c) x(i, c) = g(g_rng);
  return x;
}

Network random_net(const Ring& ring, std::vector<int> widths, PoolingSpec::Kind kind, double beta,
                   bool final_pool = false) {
  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, kind, beta);
  for (size_t l = 0; l + 1 < widths.size(); ++l)
    net.layers.push_back(random_filter(ring, widths[l + 1], widths[l]));
  net.final_pool = final_pool;
  return net;
}

// Composition of the tested primitives, written without ForwardTrace.
Signal reference_forward(const Network& net, const Signal& x) {
  Signal a = x;
  for (int l = 0; l < net.depth(); ++l) {
    Signal z = cross_channel_conv(net.ring, net.layers[l], a);
    z.rowwise() += net.layers[l].bias.transpose();
    if (l + 1 == net.depth()) return net.final_pool ? net.pooling.apply(z) : z;
    a = net.pooling.apply(z).cwiseMax(0.0);
  }
  return a;
}

}  // namespace

TEST_CASE("forward composes conv, bias, pooling, relu in order") {
  for (bool final_pool : {false, true}) {
    Network net = random_net(Ring::d1(8), {2, 3, 2}, PoolingSpec::blend_avg3, 0.5, final_pool);
    Signal x = random_signal(net.ring, 2);
    ForwardTrace trace = forward(net, x);
    CHECK((trace.output() - reference_forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((evaluate(net, x) - trace.output()).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(trace.pre.size() == 2);
    REQUIRE(trace.act.size() == 2);
  }
}

TEST_CASE("input jacobian is the exact linearization between kinks") {
  Network net = random_net(Ring::d2(3, 4), {2, 3, 1}, PoolingSpec::blend_avg3, 0.3);
  Signal x = random_signal(net.ring, 2);
  bool near_kink = true;
  MatrixXd J = input_jacobian(net, x, &near_kink);
  REQUIRE_FALSE(near_kink);
  const double h = 1e-7;
  for (int rep = 0; rep < 5; ++rep) {
    Signal d = random_signal(net.ring, 2);
    Signal up = evaluate(net, x + h * d);
    Signal dn = evaluate(net, x - h * d);
    VectorXd fd = Eigen::Map<const VectorXd>(up.data(), up.size()) -
                  Eigen::Map<const VectorXd>(dn.data(), dn.size());
    fd /= 2.0 * h;
    VectorXd lin = J * Eigen::Map<const VectorXd>(d.data(), d.size());
    CHECK((fd - lin).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("kink proximity is flagged") {
  Network net = random_net(Ring::d1(4), {1, 2, 1}, PoolingSpec::identity, 0.0);
  for (auto& layer : net.layers) layer.bias.setZero();
  Signal zero = Signal::Zero(net.ring.n(), 1);
  bool near_kink = false;
  input_jacobian(net, zero, &near_kink);
  CHECK(near_kink);
}

TEST_CASE("constant-channel detection") {
  Signal x(4, 2);
  x.col(0).setConstant(0.3);
  x.col(1).setConstant(-1.0);
  CHECK(is_constant_channels(x));
  x(2, 1) += 1e-6;
  CHECK_FALSE(is_constant_channels(x));
}

TEST_CASE("frequency blocks of the jacobian act like the dense jacobian") {
  Network net = random_net(Ring::d1(8), {2, 3, 2}, PoolingSpec::blend_avg3, 0.4);
  Signal x0(net.ring.n(), 2);
  x0.col(0).setConstant(0.7);
  x0.col(1).setConstant(0.4);
  auto blocks = jf_frequency_blocks(net, x0);
  MatrixXd J = input_jacobian(net, x0);
  Signal v = random_signal(net.ring, 2);
  VectorXd jv = J * Eigen::Map<const VectorXd>(v.data(), v.size());
  // Compare per frequency: (Jv)^_t,k = B_t(k,:) v^_t.
  MatrixXcd vhat(net.ring.n(), 2), yhat(net.ring.n(), 2);
  for (int c = 0; c < 2; ++c) {
    vhat.col(c) = fourier::analysis_real(net.ring, v.col(c));
    yhat.col(c) = fourier::analysis_real(net.ring, jv.segment(c * net.ring.n(), net.ring.n()));
  }
  for (int t = 0; t < net.ring.n(); ++t) {
    VectorXcd want = blocks[t] * vhat.row(t).transpose();
    for (int k = 0; k < 2; ++k) CHECK(std::abs(yhat(t, k) - want(k)) < 1e-8);
  }
  // Non-constant probes are rejected.
  CHECK_THROWS_AS(jf_frequency_blocks(net, v), Error);
}

TEST_CASE("loss gradients match central differences") {
  Network net = random_net(Ring::d1(5), {2, 3, 2}, PoolingSpec::blend_avg3, 0.5);
  Batch batch;
  for (int i = 0; i < 4; ++i) {
    batch.X.push_back(random_signal(net.ring, 2));
    batch.Y.push_back(random_signal(net.ring, 2));
  }
  const double lambda = 3e-3;
  std::vector<ConvFilter> grad;
  loss_and_gradients(net, batch, lambda, LossKind::mse, &grad);
  const double h = 1e-6;
  auto loss_at = [&] { return loss_and_gradients(net, batch, lambda, LossKind::mse, nullptr).total; };
  for (int l = 0; l < net.depth(); ++l) {
    for (int j = 0; j < net.ring.n(); ++j)
      for (int r = 0; r < net.layers[l].taps[j].rows(); ++r)
        for (int c = 0; c < net.layers[l].taps[j].cols(); ++c) {
          double& p = net.layers[l].taps[j](r, c);
          const double keep = p;
          p = keep + h;
          const double up = loss_at();
          p = keep - h;
          const double dn = loss_at();
          p = keep;
          const double fd = (up - dn) / (2 * h);
          CHECK(grad[l].taps[j](r, c) ==
                doctest::Approx(fd).epsilon(1e-5).scale(std::max(1.0, std::abs(fd))));
        }
    for (int k = 0; k < net.layers[l].c_out(); ++k) {
      double& p = net.layers[l].bias(k);
      const double keep = p;
      p = keep + h;
      const double up = loss_at();
      p = keep - h;
      const double dn = loss_at();
      p = keep;
      CHECK(grad[l].bias(k) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("softmax loss gradients match central differences") {
  Network net = random_net(Ring::d1(4), {1, 3, 3}, PoolingSpec::blend_avg3, 0.25);
  Batch batch;
  for (int i = 0; i < 5; ++i) {
    batch.X.push_back(random_signal(net.ring, 1));
    batch.labels.push_back(i % 3);
  }
  std::vector<ConvFilter> grad;
  loss_and_gradients(net, batch, 1e-3, LossKind::softmax_xent, &grad);
  const double h = 1e-6;
  auto loss_at = [&] {
    return loss_and_gradients(net, batch, 1e-3, LossKind::softmax_xent, nullptr).total;
  };
  for (int l = 0; l < net.depth(); ++l)
    for (int j = 0; j < net.ring.n(); ++j) {
      double& p = net.layers[l].taps[j](0, 0);
      const double keep = p;
      p = keep + h;
      const double up = loss_at();
      p = keep - h;
      const double dn = loss_at();
      p = keep;
      CHECK(grad[l].taps[j](0, 0) == doctest::Approx((up - dn) / (2 * h)).epsilon(2e-5));
    }
}

TEST_CASE("tangent kernel trace equals the lifted-parameter frobenius norm") {
  const Ring ring = Ring::d1(4);
  Network net = random_net(ring, {2, 2, 1}, PoolingSpec::blend_avg3, 0.5);
  Signal x = random_signal(ring, 2);
  ForwardTrace trace = forward(net, x);
  REQUIRE_FALSE(trace.near_kink);

  // Evaluate with one layer's dense matrix or bias matrix replaced.
  auto eval_lifted = [&](int layer, const MatrixXd* W_override,
                         const MatrixXd* B_override) -> VectorXd {
    Signal a = x;
    for (int l = 0; l < net.depth(); ++l) {
      const int n = ring.n(), co = net.layers[l].c_out();
      VectorXd va = Eigen::Map<const VectorXd>(a.data(), a.size());
      MatrixXd W = (l == layer && W_override) ? *W_override : te_matrix(ring, net.layers[l]);
      VectorXd z = W * va;
      if (l == layer && B_override) {
        z += Eigen::Map<const VectorXd>(B_override->data(), B_override->size());
      } else {
        for (int k = 0; k < co; ++k)
          z.segment(k * n, n).array() += net.layers[l].bias(k);
      }
      Signal zs = Eigen::Map<const Signal>(z.data(), n, co);
      if (l + 1 == net.depth()) return Eigen::Map<const VectorXd>(zs.data(), zs.size());
      a = net.pooling.apply(zs).cwiseMax(0.0);
    }
    return VectorXd();
  };

  const double h = 1e-6;
  double fd_total = 0.0;
  for (int l = 0; l < net.depth(); ++l) {
    MatrixXd W = te_matrix(ring, net.layers[l]);
    for (int r = 0; r < W.rows(); ++r)
      for (int c = 0; c < W.cols(); ++c) {
        MatrixXd up = W, dn = W;
        up(r, c) += h;
        dn(r, c) -= h;
        VectorXd diff = eval_lifted(l, &up, nullptr) - eval_lifted(l, &dn, nullptr);
        fd_total += (diff / (2 * h)).squaredNorm();
      }
    const int n = ring.n(), co = net.layers[l].c_out();
    MatrixXd B(n, co);
    for (int k = 0; k < co; ++k) B.col(k).setConstant(net.layers[l].bias(k));
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < co; ++k) {
        MatrixXd up = B, dn = B;
        up(r, k) += h;
        dn(r, k) -= h;
        VectorXd diff = eval_lifted(l, nullptr, &up) - eval_lifted(l, nullptr, &dn);
        fd_total += (diff / (2 * h)).squaredNorm();
      }
  }
  CHECK(ntk_trace(net, x) == doctest::Approx(fd_total).epsilon(1e-5));
}

TEST_CASE("balancedness residuals read the layer norms") {
  Network net = random_net(Ring::d1(6), {1, 2, 2, 1}, PoolingSpec::identity, 0.0);
  auto res = balancedness_residuals(net);
  REQUIRE(res.size() == 2);
  for (int l = 0; l < 2; ++l) {
    const double want = net.layers[l].weight_sq_filter() + net.layers[l].bias_sq() -
                        net.layers[l + 1].weight_sq_filter();
    CHECK(res[l] == doctest::Approx(want));
  }
}

TEST_CASE("training reduces the loss and logs history") {
  Network net = random_net(Ring::d1(8), {1, 4, 1}, PoolingSpec::blend_avg3, 0.25);
  init_params(net, 1.0, 5);
  Batch batch;
  std::uniform_int_distribution<int> pos(0, 7);
  for (int i = 0; i < 16; ++i) {
    Signal x = Signal::Zero(8, 1);
    x(pos(g_rng), 0) = 1.0;
    batch.X.push_back(x);
    batch.Y.push_back(x);
  }
  TrainConfig cfg;
  cfg.lambda = 1e-4;
  cfg.eta = 0.05;
  cfg.steps = 120;
  cfg.momentum = 0.9;
  cfg.seed = 3;
  cfg.log_every = 40;
  auto history = train(net, batch, cfg);
  REQUIRE(history.size() == 4);  // steps 0, 40, 80, final
  CHECK(history.front().step == 0);
  CHECK(history.back().step == 120);
  CHECK(history.back().loss < history.front().loss);
  CHECK(history.back().theta_sq == doctest::Approx(net.theta_sq()));
  for (const auto& row : history) REQUIRE(row.layer_w_sq.size() == 2);

  std::string csv = history_csv(history);
  CHECK(csv.rfind("step,loss,data_loss,reg,theta_sq", 0) == 0);
  CHECK(csv.find("\r") == std::string::npos);
  CHECK(csv.find(",w_sq_layer1") != std::string::npos);
}

TEST_CASE("training is deterministic in the seed") {
  auto run = [](uint64_t seed) {
    Network net;
    net.ring = Ring::d1(6);
    net.pooling = pooling_operator(net.ring, PoolingSpec::blend_avg3, 0.5);
    net.layers = {zero_filter(net.ring, 3, 1), zero_filter(net.ring, 1, 3)};
    init_params(net, 1.0, seed);
    Batch batch;
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 8; ++i) {
      Signal x(6, 1), y(6, 1);
      for (int j = 0; j < 6; ++j) {
        x(j, 0) = g(rng);
        y(j, 0) = g(rng);
      }
      batch.X.push_back(x);
      batch.Y.push_back(y);
    }
    TrainConfig cfg;
    cfg.eta = 0.01;
    cfg.steps = 30;
    cfg.seed = seed;
    cfg.batch_size = 4;
    train(net, batch, cfg);
    return checkpoint_bytes(net);
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("constant filter head and frozen biases are preserved") {
  Network net = random_net(Ring::d1(6), {1, 3, 2}, PoolingSpec::blend_avg3, 0.25);
  init_params(net, 1.0, 11);
  Batch batch;
  for (int i = 0; i < 6; ++i) {
    batch.X.push_back(random_signal(net.ring, 1).cwiseAbs());
    batch.labels.push_back(i % 2);
  }
  TrainConfig cfg;
  cfg.eta = 0.02;
  cfg.steps = 25;
  cfg.loss = LossKind::softmax_xent;
  cfg.freeze_bias = true;
  cfg.constant_final_filter = true;
  train(net, batch, cfg);
  for (const auto& layer : net.layers) CHECK(layer.bias.cwiseAbs().maxCoeff() == 0.0);
  const auto& last = net.layers.back();
  for (int j = 1; j < net.ring.n(); ++j)
    CHECK((last.taps[j] - last.taps[0]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("checkpoint bytes round trip bit-exactly") {
  Network net = random_net(Ring::d2(3, 4), {2, 3, 1}, PoolingSpec::blend_avg3, 0.35, true);
  net.seed = 12345;
  auto bytes = checkpoint_bytes(net);
  Network back = checkpoint_parse(bytes.data(), bytes.size());
  CHECK(back.ring == net.ring);
  CHECK(back.final_pool == net.final_pool);
  CHECK(back.seed == net.seed);
  CHECK(checkpoint_bytes(back) == bytes);

  const std::string path = "/tmp/cbn_test_roundtrip.cbn";
  save_checkpoint(net, path);
  Network loaded = load_checkpoint(path);
  CHECK(checkpoint_bytes(loaded) == bytes);
  std::remove(path.c_str());
}

TEST_CASE("malformed checkpoints are rejected") {
  Network net = random_net(Ring::d1(4), {1, 1}, PoolingSpec::identity, 0.0);
  auto bytes = checkpoint_bytes(net);
  CHECK_THROWS_AS(checkpoint_parse(bytes.data(), 3), Error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(checkpoint_parse(bad_magic.data(), bad_magic.size()), Error);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 5);
  CHECK_THROWS_AS(checkpoint_parse(truncated.data(), truncated.size()), Error);
  CHECK_THROWS_AS(load_checkpoint("/tmp/does_not_exist_cbn.cbn"), Error);
}

TEST_CASE("custom pooling survives the checkpoint header") {
  const Ring ring = Ring::d1(6);
  VectorXd m(6);
  m << 0.6, 0.2, 0.0, 0.0, 0.0, 0.2;
  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, PoolingSpec::custom, 0.0, &m);
  net.layers = {random_filter(ring, 2, 1), random_filter(ring, 1, 2)};
  auto bytes = checkpoint_bytes(net);
  Network back = checkpoint_parse(bytes.data(), bytes.size());
  CHECK(back.pooling.kind == PoolingSpec::custom);
  CHECK((back.pooling.m - m).cwiseAbs().maxCoeff() == 0.0);
  Signal x = random_signal(ring, 1);
  CHECK((evaluate(back, x) - evaluate(net, x)).cwiseAbs().maxCoeff() == 0.0);
}
