// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lipcmd::base64 {

std::string encode(std::span<const std::uint8_t> bytes);

/// Standard alphabet with '=' padding. Returns nullopt on malformed input.
std::optional<std::vector<std::uint8_t>> decode(std::string_view text);

/// Little-endian IEEE-754 binary32 packing, independent of host byte order.
std::string encode_floats(std::span<const float> values);
std::optional<std::vector<float>> decode_floats(std::string_view text);

}  // namespace lipcmd::base64
