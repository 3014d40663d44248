#pragma once

#include "cpshield/optim.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cpshield::ckpt {

// Checkpoint file layout (documented for external readers):
//   line  "cpshield-checkpoint v1"
//   line  "kind <model-kind>"
//   lines "cfg <key> <value>"            (model configuration)
//   lines "param <name> <ndims> <d0> .." (declared parameter order)
//   line  "data"
//   raw little-endian f32 blocks, one per param line, in declared order.

struct Header {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, ad::Shape>> params;
};

/// Writes header + parameter blocks. Throws std::runtime_error on IO failure.
void save(const std::string& path, const std::string& kind,
          const std::vector<std::pair<std::string, std::string>>& config,
          const std::vector<ad::ParamRef>& params);

/// Parses the header and fills the given parameter blocks (matched by name
/// and shape, in declared order). Throws std::runtime_error on version or
/// structure mismatch.
Header load(const std::string& path, const std::string& expected_kind,
            const std::vector<ad::ParamRef>& params);

/// Header only (for inspecting kind/config before constructing a model).
Header peek(const std::string& path);

}  // namespace cpshield::ckpt
