// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "d2quant/model.hpp"
#include "d2quant/pipeline.hpp"

namespace d2quant {

// Model artifact layout (all integers little-endian):
//   bytes 0..7   manifest length N as a 64-bit unsigned integer
//   bytes 8..8+N JSON manifest
//   padding up to the next 64-byte boundary
//   payload      one binary blob; every tensor section starts 64-byte aligned
//
// The manifest carries the format version string, the model configuration,
// and a tensor directory mapping each name to dtype, shape, payload offset
// and byte length. A quantized weight is stored as three entries sharing a
// prefix: <name>.codes (u8, bits and group_size recorded here),
// <name>.scales (f32) and <name>.zero_points (u8). Full-precision tensors
// use the bare name with dtype f32.

inline constexpr const char* kArtifactVersion = "d2quant-artifact-v1";

struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// unknown or missing format version string
struct ArtifactVersionError : ArtifactError {
  using ArtifactError::ArtifactError;
};
// file shorter than the manifest or payload claims
struct ArtifactTruncatedError : ArtifactError {
  using ArtifactError::ArtifactError;
};
// offset/length/shape bookkeeping inconsistent
struct ArtifactBoundsError : ArtifactError {
  using ArtifactError::ArtifactError;
};
// non-finite reals or out-of-range codes in the payload
struct ArtifactValueError : ArtifactError {
  using ArtifactError::ArtifactError;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Atomic write (temp file + rename). Lossless: a round trip reproduces the
// bundle bit-for-bit, including quantized codes and norm biases.
void save_model(const ModelBundle& m, const std::filesystem::path& path);

ModelBundle load_model(const std::filesystem::path& path);

// Bytes of the file become token ids, chunked into at most `samples`
// sequences of seq_len, dropping the tail. Throws CalibrationError when the
// file yields no complete sequence.
CalibrationSet load_calibration(const std::filesystem::path& path,
                                std::size_t samples, std::size_t seq_len);

}  // namespace d2quant
