#pragma once

// Binary checkpoints.
//
// Model:    "UQAD" | version u32 = 1 | spec | params (P x f64)
// Ensemble: "UQAD" | version u32 = 2 | spec | kind u8 | member count u32 |
//           per member: weight f64, params (P x f64), has_mask u8, mask (sum(hidden) x f64)
// spec:     input_dim u32 | hidden count u32 | hidden sizes u32... | activation u8 |
//           num_classes u32 | dropout_rate f64 | feature_mode u8
// All integers and floats little-endian.

#include <filesystem>
#include <iosfwd>

#include "uqadv/inference.hpp"

namespace uqadv {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::uint32_t kEnsembleFormatVersion = 2;

void write_params(std::ostream& out, const ParamVector& params);
ParamVector read_params(std::istream& in, const std::string& source = "<stream>");
void write_ensemble(std::ostream& out, const PosteriorEnsemble& ensemble);
PosteriorEnsemble read_ensemble(std::istream& in, const std::string& source = "<stream>");

void save_params(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_params(const std::filesystem::path& path);
void save_ensemble(const std::filesystem::path& path, const PosteriorEnsemble& ensemble);
PosteriorEnsemble load_ensemble(const std::filesystem::path& path);

/// Reads either format; a model file becomes a single-member ensemble.
PosteriorEnsemble load_any(const std::filesystem::path& path);

}  // namespace uqadv
