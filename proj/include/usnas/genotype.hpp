#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace usnas {

// The five candidate operations of the micro search space. Enumerator order
// is the wire order used by encode()/decode() and the controller.
enum class OpKind : int {
  kIdentity = 0,
  kSepConv3 = 1,
  kSepConv5 = 2,
  kAvgPool3 = 3,
  kMaxPool3 = 4,
};

inline constexpr int kNumOps = 5;

std::string_view op_name(OpKind op);  // "identity", "sep3", "sep5", "avg3", "max3"
std::optional<OpKind> op_from_name(std::string_view name);

// One cell node: two inputs, two operations, combined by element-wise add.
// Input index 0/1 are the outputs of the two preceding cells; index j+2 is
// node j of this cell, so node i may reference indices in [0, i+2).
struct NodeSpec {
  int in_a = 0;
  OpKind op_a = OpKind::kIdentity;
  int in_b = 0;
  OpKind op_b = OpKind::kIdentity;

  bool operator==(const NodeSpec&) const = default;
};

struct CellGenotype {
  std::vector<NodeSpec> nodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  bool operator==(const CellGenotype&) const = default;
};

// The unit the controller samples: one normal cell and one reduction cell
// with the same node count.
struct ArchPair {
  CellGenotype normal;
  CellGenotype reduction;

  bool operator==(const ArchPair&) const = default;
};

// Conventions for the analytic parameter counter. The flags control what the
// count includes; the network builders instantiate batchnorm affine terms and
// structurally required projections unconditionally and conv biases per
// include_conv_bias, so analytic counts match enumerated weights under the
// matching config.
struct CountingConfig {
  bool include_batchnorm_affine = true;
  bool include_conv_bias = false;
  bool include_projection_ops = true;
};

struct ValidationResult {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  std::string joined() const;
};

// Checks node count and the per-node input index bounds. Violations are
// returned as data, one message per offending field.
ValidationResult validate(const CellGenotype& g, int expected_node_count);

// Flat decision sequence, 4 entries per node: (in_a, op_a, in_b, op_b).
// Throws ValidationError if the genotype is invalid.
std::vector<int> encode(const CellGenotype& g);

// Inverse of encode. Throws ValidationError on wrong length, op index
// outside [0,5) or input index outside its node's bound.
CellGenotype decode(const std::vector<int>& seq, int node_count);

// Node positions never consumed as an input by a later node. Their outputs
// are concatenated to form the cell output; never empty for a valid cell.
std::vector<int> loose_ends(const CellGenotype& g);

// Analytic parameter count of one cell instance whose two inputs both carry
// c_in channels at equal spatial scale (the normal-cell case; the network
// counter handles mismatched instances). Per op application:
//   sep conv k:      k^2*c + c*c_out   (+ c + c_out biases) (+ 2*c_out bn)
//   identity/pool:   0, plus a 1x1 projection c*c_out (+ c_out bias)
//                    (+ 2*c_out bn) when c != c_out and projections are on
// plus the output projection L*c_out*c_out (+ c_out bias) (+ 2*c_out bn)
// over the L loose ends when projections are on.
int64_t cell_param_count(const CellGenotype& g, int c_in, int c_out,
                         const CountingConfig& cfg);

// Graphviz rendering: one vertex per cell input and node plus a concat sink.
// Byte-deterministic for a given genotype and title.
std::string to_dot(const CellGenotype& g, const std::string& title);

// Genotype document: {"B": n, "normal": [[in_a, op_a, in_b, op_b], ...],
// "reduction": [...]} with ops serialized by name. Round-trip stable.
std::string arch_to_json(const ArchPair& arch);
ArchPair arch_from_json(const std::string& text);

ArchPair load_arch(const std::filesystem::path& path);
void save_arch(const ArchPair& arch, const std::filesystem::path& path);

}  // namespace usnas
