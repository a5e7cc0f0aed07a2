#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "usnas/genotype.hpp"

namespace usnas {

enum class CellTag { kNormal, kReduction };

enum class StackVariant { kEnas7, kEnas17 };

std::string_view variant_name(StackVariant v);  // "ENAS7" / "ENAS17"
StackVariant variant_from_name(std::string_view name);

// The macro skeleton: an ordered list of cell roles plus the width/head
// configuration shared by every cell network.
struct StackPlan {
  std::vector<CellTag> cells;
  int base_channels = 20;
  int num_classes = 2;

  bool operator==(const StackPlan&) const = default;
};

// ENAS7 = (N, R, N, R, N, N, N); ENAS17 = (Nx5, R, Nx5, R, Nx5).
StackPlan make_stack_plan(StackVariant variant, int base_channels,
                          int num_classes);

// One cell position with resolved channel widths. reduce_prev_prev marks
// positions where the prev-prev input sits at double the spatial scale of
// prev and is passed through a stride-2 1x1 projection before use.
struct CellShape {
  CellTag tag = CellTag::kNormal;
  int c_prev_prev = 0;
  int c_prev = 0;
  int c_out = 0;
  bool reduce_prev_prev = false;
};

struct CellStackNet {
  ArchPair arch;
  StackPlan plan;
  std::string label;  // "ENAS7", "ENAS17" or "custom"
  int input_channels = 1;
  int stem_channels = 0;  // equals plan.base_channels
  std::vector<CellShape> cells;
};

// Plain feed-forward layer chain; carries the AlexNet baseline.
struct PlainLayer {
  enum class Kind { kConv, kRelu, kMaxPool, kAdaptiveAvgPool, kFlatten, kLinear };
  Kind kind = Kind::kRelu;
  int in_ch = 0, out_ch = 0;   // conv / linear widths
  int kernel = 0, stride = 1, pad = 0;
  int target = 0;              // adaptive pool output side
  bool bias = true;
};

struct LayerNet {
  std::string label;
  int input_channels = 3;
  int num_classes = 2;
  std::vector<PlainLayer> layers;
};

struct NetworkSpec {
  std::variant<CellStackNet, LayerNet> body;

  const CellStackNet* as_cells() const {
    return std::get_if<CellStackNet>(&body);
  }
  const LayerNet* as_layers() const { return std::get_if<LayerNet>(&body); }
};

// Resolves the channel/scale schedule for the given plan: channels double and
// spatial dims ceiling-halve at every reduction cell. Throws ValidationError
// on an invalid genotype or empty plan.
NetworkSpec build_network(const ArchPair& arch, const StackPlan& plan,
                          std::string label = "custom", int input_channels = 1);

// Canonical single-stream AlexNet (five convolutions, 6x6 adaptive average
// pooling, three linear layers, biases throughout, no LRN or grouping) with
// the final linear width set to num_classes. input_side >= 63.
NetworkSpec build_alexnet(int num_classes, int input_side);

// One shape per stage (stem/cells/head for cell networks, per layer for
// plain networks). Spatial shapes are (H, W, C); the final entry is
// (num_classes,). Throws ValidationError naming the stage on underflow.
std::vector<std::vector<long>> forward_shapes(const NetworkSpec& net,
                                              std::array<long, 3> input_hwc);

// Parameter count of one resolved cell instance. Exposed so the trainer and
// supergraph reuse the single accounting rule.
int64_t cell_instance_param_count(const CellGenotype& g, const CellShape& shape,
                                  const CountingConfig& cfg);

// stem + cells + head (or the plain layer sum). The builders instantiate
// exactly what this counts under the same config, which the tests verify by
// exhaustive enumeration.
int64_t network_param_count(const NetworkSpec& net, const CountingConfig& cfg);

// JSON document sufficient to rebuild the architecture: variant, widths, B,
// counting config, genotype and the total parameter count.
std::string network_manifest_json(const NetworkSpec& net,
                                  const CountingConfig& cfg);
NetworkSpec network_from_manifest_json(const std::string& text);

}  // namespace usnas
