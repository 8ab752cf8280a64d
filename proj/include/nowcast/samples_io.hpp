#pragma once

#include <string>

#include "nowcast/mcmc.hpp"

namespace nowcast {

// Columnar binary samples file: an 8-byte magic, a JSON header (parameter
// name table, dimensions, seeds, the model spec), then per chain the
// parameter, lambda, and latent-total draw matrices as little-endian
// 64-bit floats in row-major order.
void save_samples(const std::string& path, const PosteriorSamples& samples);
PosteriorSamples load_samples(const std::string& path);

// FNV-1a 64-bit hash, hex-encoded; used for config fingerprints in run
// manifests.
std::string fnv1a_hex(const std::string& text);

}  // namespace nowcast
