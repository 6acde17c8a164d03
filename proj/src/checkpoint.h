#pragma once

#include "network.h"

namespace cbn {

// CBN1 checkpoint: "CBN1" magic, u32 little-endian length, UTF-8 JSON header,
// then per layer the filter taps in (tap, out-channel, in-channel) row-major
// order followed by the bias, all little-endian f64. Round trips bit-exactly.
std::vector<uint8_t> checkpoint_bytes(const Network& net);
Network checkpoint_parse(const uint8_t* data, size_t len);

void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace cbn
