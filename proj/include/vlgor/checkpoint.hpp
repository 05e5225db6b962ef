// Parameter checkpoints: one JSON header line (format, architecture,
// parameter names/shapes, metadata) followed by the raw little-endian
// float32 parameter data in registry order.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "vlgor/nn.hpp"

namespace vlgor::ckpt {

inline constexpr const char* kFormat = "vlgor-ckpt-1";

void save_checkpoint(const std::string& path, const std::string& arch,
                     const std::vector<nn::ParamView<float>>& params,
                     const std::map<std::string, std::string>& meta = {});

// Fills the given parameter views in place; header must match arch and every
// parameter's name/shape. Returns the stored metadata.
std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   const std::string& arch,
                                                   std::vector<nn::ParamView<float>>& params);

// Reads only the metadata map (cheap peek without a constructed network).
std::map<std::string, std::string> read_checkpoint_meta(const std::string& path,
                                                        std::string* arch = nullptr);

}  // namespace vlgor::ckpt
