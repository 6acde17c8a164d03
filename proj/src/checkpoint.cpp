#include "checkpoint.h"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cbn {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'B', 'N', '1'};

void put_doubles(std::vector<uint8_t>* out, const double* vals, size_t count) {
  const size_t at = out->size();
  out->resize(at + count * sizeof(double));
  std::memcpy(out->data() + at, vals, count * sizeof(double));
}

json header_json(const Network& net) {
  json h;
  h["version"] = 1;
  h["dims"] = net.ring.axes();
  if (net.ring.axes() == 1)
    h["n"] = net.ring.dims[0];
  else
    h["n"] = net.ring.dims;
  h["L"] = net.depth();
  h["channels"] = net.widths();
  json pooling;
  pooling["kind"] = PoolingSpec::kind_name(net.pooling.kind);
  pooling["beta"] = net.pooling.beta;
  pooling["m"] = std::vector<double>(net.pooling.m.data(), net.pooling.m.data() + net.pooling.m.size());
  h["pooling"] = pooling;
  h["seed"] = net.seed;
  h["final_pool"] = net.final_pool;
  return h;
}

}  // namespace

std::vector<uint8_t> checkpoint_bytes(const Network& net) {
  net.validate();
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  const std::string header = header_json(net).dump();
  require(header.size() < (1u << 31), "checkpoint: header too large");
  uint32_t len = static_cast<uint32_t>(header.size());
  uint8_t lenb[4] = {static_cast<uint8_t>(len & 0xff), static_cast<uint8_t>((len >> 8) & 0xff),
                     static_cast<uint8_t>((len >> 16) & 0xff),
                     static_cast<uint8_t>((len >> 24) & 0xff)};
  out.insert(out.end(), lenb, lenb + 4);
  out.insert(out.end(), header.begin(), header.end());
  const int n = net.ring.n();
  std::vector<double> row;
  for (const auto& layer : net.layers) {
    row.clear();
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < layer.c_out(); ++k)
        for (int s = 0; s < layer.c_in(); ++s) row.push_back(layer.taps[j](k, s));
    put_doubles(&out, row.data(), row.size());
    put_doubles(&out, layer.bias.data(), layer.bias.size());
  }
  return out;
}

Network checkpoint_parse(const uint8_t* data, size_t len) {
  require(len >= 8, "checkpoint: truncated header");
  require(std::memcmp(data, kMagic, 4) == 0, "checkpoint: bad magic (expected CBN1)");
  uint32_t hlen = static_cast<uint32_t>(data[4]) | (static_cast<uint32_t>(data[5]) << 8) |
                  (static_cast<uint32_t>(data[6]) << 16) | (static_cast<uint32_t>(data[7]) << 24);
  require(len >= 8 + static_cast<size_t>(hlen), "checkpoint: truncated header body");
  json h;
  try {
    h = json::parse(data + 8, data + 8 + hlen);
  } catch (const json::exception& e) {
    fail_invalid(std::string("checkpoint: invalid header JSON: ") + e.what());
  }

  Network net;
  try {
    const int dims = h.at("dims").get<int>();
    require(dims == 1 || dims == 2, "checkpoint: dims must be 1 or 2");
    if (h.at("n").is_array()) {
      auto nv = h.at("n").get<std::vector<int>>();
      require(static_cast<int>(nv.size()) == dims, "checkpoint: n list does not match dims");
      net.ring.dims = nv;
    } else {
      require(dims == 1, "checkpoint: scalar n requires dims == 1");
      net.ring = Ring::d1(h.at("n").get<int>());
    }
    require(net.ring.valid(), "checkpoint: invalid ring sizes");
    const int L = h.at("L").get<int>();
    auto channels = h.at("channels").get<std::vector<int>>();
    require(static_cast<int>(channels.size()) == L + 1, "checkpoint: channels must list c_0..c_L");
    const json& pj = h.at("pooling");
    auto kind = PoolingSpec::kind_from_name(pj.at("kind").get<std::string>());
    const double beta = pj.value("beta", 0.0);
    auto mvec = pj.at("m").get<std::vector<double>>();
    require(static_cast<int>(mvec.size()) == net.ring.n(), "checkpoint: pooling filter length mismatch");
    if (kind == PoolingSpec::custom) {
      VectorXd m = Eigen::Map<const VectorXd>(mvec.data(), mvec.size());
      net.pooling = pooling_operator(net.ring, kind, beta, &m);
    } else {
      net.pooling = pooling_operator(net.ring, kind, beta);
      // The stored taps are authoritative; reject mismatched files.
      for (int j = 0; j < net.ring.n(); ++j)
        require(net.pooling.m(j) == mvec[j], "checkpoint: pooling taps disagree with kind/beta");
    }
    net.seed = h.value("seed", 0ull);
    net.final_pool = h.value("final_pool", false);
    const size_t body_at = 8 + hlen;
    size_t offset = 0;  // in doubles
    const int n = net.ring.n();
    std::vector<double> buf;
    auto read_doubles = [&](size_t count) -> const double* {
      require(body_at + (offset + count) * sizeof(double) <= len,
              "checkpoint: truncated layer data");
      buf.resize(count);
      std::memcpy(buf.data(), data + body_at + offset * sizeof(double), count * sizeof(double));
      offset += count;
      return buf.data();
    };
    for (int l = 0; l < L; ++l) {
      const int co = channels[l + 1], ci = channels[l];
      ConvFilter f = zero_filter(net.ring, co, ci);
      const double* w = read_doubles(static_cast<size_t>(n) * co * ci);
      size_t idx = 0;
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < co; ++k)
          for (int s = 0; s < ci; ++s) f.taps[j](k, s) = w[idx++];
      const double* b = read_doubles(co);
      for (int k = 0; k < co; ++k) f.bias(k) = b[k];
      net.layers.push_back(std::move(f));
    }
    require(body_at + offset * sizeof(double) == len, "checkpoint: trailing bytes");
  } catch (const json::exception& e) {
    fail_invalid(std::string("checkpoint: malformed header: ") + e.what());
  }
  net.validate();
  return net;
}

void save_checkpoint(const Network& net, const std::string& path) {
  auto bytes = checkpoint_bytes(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("checkpoint: cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!out) fail_runtime("checkpoint: write failed: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_invalid("checkpoint: cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_parse(bytes.data(), bytes.size());
}

}  // namespace cbn
