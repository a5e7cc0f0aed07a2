#include "usnas/network.hpp"

#include <cmath>

#include "json.hpp"
#include "usnas/common.hpp"

namespace usnas {

namespace {

int64_t sep_conv_params(int kernel, int c, int c_out,
                        const CountingConfig& cfg) {
  int64_t n = static_cast<int64_t>(kernel) * kernel * c +
              static_cast<int64_t>(c) * c_out;
  if (cfg.include_conv_bias) n += c + c_out;
  if (cfg.include_batchnorm_affine) n += 2 * static_cast<int64_t>(c_out);
  return n;
}

int64_t projection_params(int c, int c_out, const CountingConfig& cfg) {
  int64_t n = static_cast<int64_t>(c) * c_out;
  if (cfg.include_conv_bias) n += c_out;
  if (cfg.include_batchnorm_affine) n += 2 * static_cast<int64_t>(c_out);
  return n;
}

}  // namespace

std::string_view variant_name(StackVariant v) {
  return v == StackVariant::kEnas7 ? "ENAS7" : "ENAS17";
}

StackVariant variant_from_name(std::string_view name) {
  if (name == "ENAS7" || name == "enas7") return StackVariant::kEnas7;
  if (name == "ENAS17" || name == "enas17") return StackVariant::kEnas17;
  throw ValidationError("unknown stack variant \"" + std::string(name) +
                        "\" (expected ENAS7 or ENAS17)");
}

StackPlan make_stack_plan(StackVariant variant, int base_channels,
                          int num_classes) {
  if (base_channels < 1)
    throw ValidationError("make_stack_plan: base_channels must be >= 1");
  if (num_classes < 2)
    throw ValidationError("make_stack_plan: num_classes must be >= 2");
  StackPlan plan;
  plan.base_channels = base_channels;
  plan.num_classes = num_classes;
  const CellTag n = CellTag::kNormal, r = CellTag::kReduction;
  if (variant == StackVariant::kEnas7) {
    plan.cells = {n, r, n, r, n, n, n};
  } else {
    plan.cells = {n, n, n, n, n, r, n, n, n, n, n, r, n, n, n, n, n};
  }
  return plan;
}

NetworkSpec build_network(const ArchPair& arch, const StackPlan& plan,
                          std::string label, int input_channels) {
  if (plan.cells.empty())
    throw ValidationError("build_network: stack plan is empty");
  if (plan.num_classes < 2)
    throw ValidationError("build_network: num_classes must be >= 2");
  const int b = arch.normal.node_count();
  if (arch.reduction.node_count() != b)
    throw ValidationError(
        "build_network: normal and reduction cells disagree on node count");
  ValidationResult vn = validate(arch.normal, b);
  ValidationResult vr = validate(arch.reduction, b);
  if (!vn.ok() || !vr.ok())
    throw ValidationError("build_network: invalid genotype: " + vn.joined() +
                          vr.joined());

  CellStackNet net;
  net.arch = arch;
  net.plan = plan;
  net.label = std::move(label);
  net.input_channels = input_channels;
  net.stem_channels = plan.base_channels;

  int c_pp = net.stem_channels, c_p = net.stem_channels;
  int scale_pp = 1, scale_p = 1;
  int reductions = 0;
  for (CellTag tag : plan.cells) {
    if (tag == CellTag::kReduction) ++reductions;
    CellShape shape;
    shape.tag = tag;
    shape.c_prev_prev = c_pp;
    shape.c_prev = c_p;
    shape.c_out = plan.base_channels * (1 << reductions);
    shape.reduce_prev_prev = scale_pp != scale_p;
    net.cells.push_back(shape);

    const int scale_out = tag == CellTag::kReduction ? scale_p * 2 : scale_p;
    c_pp = c_p;
    scale_pp = scale_p;
    c_p = shape.c_out;
    scale_p = scale_out;
  }
  return NetworkSpec{std::move(net)};
}

NetworkSpec build_alexnet(int num_classes, int input_side) {
  if (num_classes < 2)
    throw ValidationError("build_alexnet: num_classes must be >= 2");
  if (input_side < 63)
    throw ValidationError("build_alexnet: input side " +
                          std::to_string(input_side) +
                          " below the 63-pixel minimum of the canonical "
                          "stride/kernel schedule");
  LayerNet net;
  net.label = "AlexNet";
  net.input_channels = 3;
  net.num_classes = num_classes;
  using K = PlainLayer::Kind;
  auto conv = [](int in, int out, int k, int s, int p) {
    return PlainLayer{K::kConv, in, out, k, s, p, 0, true};
  };
  auto relu = [] { return PlainLayer{K::kRelu}; };
  auto pool = [] { return PlainLayer{K::kMaxPool, 0, 0, 3, 2, 0, 0, false}; };
  net.layers = {
      conv(3, 64, 11, 4, 2),
      relu(),
      pool(),
      conv(64, 192, 5, 1, 2),
      relu(),
      pool(),
      conv(192, 384, 3, 1, 1),
      relu(),
      conv(384, 256, 3, 1, 1),
      relu(),
      conv(256, 256, 3, 1, 1),
      relu(),
      pool(),
      PlainLayer{K::kAdaptiveAvgPool, 0, 0, 0, 1, 0, 6, false},
      PlainLayer{K::kFlatten},
      PlainLayer{K::kLinear, 256 * 6 * 6, 4096, 0, 1, 0, 0, true},
      relu(),
      PlainLayer{K::kLinear, 4096, 4096, 0, 1, 0, 0, true},
      relu(),
      PlainLayer{K::kLinear, 4096, num_classes, 0, 1, 0, 0, true},
  };
  NetworkSpec spec{std::move(net)};
  forward_shapes(spec, {input_side, input_side, 3});  // schedule sanity
  return spec;
}

std::vector<std::vector<long>> forward_shapes(const NetworkSpec& net,
                                              std::array<long, 3> input_hwc) {
  std::vector<std::vector<long>> stages;
  long h = input_hwc[0], w = input_hwc[1];
  const long c_in = input_hwc[2];
  if (h < 1 || w < 1)
    throw ValidationError("forward_shapes: empty input");

  if (const CellStackNet* cells = net.as_cells()) {
    if (c_in != cells->input_channels)
      throw ValidationError("forward_shapes: input has " +
                            std::to_string(c_in) + " channels, stem expects " +
                            std::to_string(cells->input_channels));
    stages.push_back({h, w, cells->stem_channels});  // 3x3 stride-1 stem
    long h_p = h, w_p = w;
    for (size_t i = 0; i < cells->cells.size(); ++i) {
      const CellShape& shape = cells->cells[i];
      if (shape.tag == CellTag::kReduction) {
        h_p = (h_p + 1) / 2;
        w_p = (w_p + 1) / 2;
      }
      stages.push_back({h_p, w_p, shape.c_out});
    }
    stages.push_back({static_cast<long>(cells->plan.num_classes)});
    return stages;
  }

  const LayerNet& layers = *net.as_layers();
  if (c_in != layers.input_channels)
    throw ValidationError("forward_shapes: input has " + std::to_string(c_in) +
                          " channels, network expects " +
                          std::to_string(layers.input_channels));
  long c = c_in;
  long flat = 0;
  bool flattened = false;
  for (size_t i = 0; i < layers.layers.size(); ++i) {
    const PlainLayer& l = layers.layers[i];
    using K = PlainLayer::Kind;
    switch (l.kind) {
      case K::kConv: {
        const long ho = (h + 2 * l.pad - l.kernel) / l.stride + 1;
        const long wo = (w + 2 * l.pad - l.kernel) / l.stride + 1;
        if (ho < 1 || wo < 1)
          throw ValidationError("forward_shapes: spatial underflow at stage " +
                                std::to_string(i) + " (conv)");
        h = ho;
        w = wo;
        c = l.out_ch;
        stages.push_back({h, w, c});
        break;
      }
      case K::kMaxPool: {
        const long ho = (h - l.kernel) / l.stride + 1;
        const long wo = (w - l.kernel) / l.stride + 1;
        if (ho < 1 || wo < 1)
          throw ValidationError("forward_shapes: spatial underflow at stage " +
                                std::to_string(i) + " (maxpool)");
        h = ho;
        w = wo;
        stages.push_back({h, w, c});
        break;
      }
      case K::kAdaptiveAvgPool:
        h = l.target;
        w = l.target;
        stages.push_back({h, w, c});
        break;
      case K::kRelu:
        stages.push_back(flattened ? std::vector<long>{flat}
                                   : std::vector<long>{h, w, c});
        break;
      case K::kFlatten:
        flat = h * w * c;
        flattened = true;
        stages.push_back({flat});
        break;
      case K::kLinear:
        if (!flattened || flat != l.in_ch)
          throw ValidationError("forward_shapes: stage " + std::to_string(i) +
                                " (linear) expects width " +
                                std::to_string(l.in_ch) + ", got " +
                                std::to_string(flat));
        flat = l.out_ch;
        stages.push_back({flat});
        break;
    }
  }
  return stages;
}

int64_t cell_instance_param_count(const CellGenotype& g, const CellShape& shape,
                                  const CountingConfig& cfg) {
  const bool reduction = shape.tag == CellTag::kReduction;
  int64_t total = 0;
  if (shape.reduce_prev_prev && cfg.include_projection_ops)
    total += projection_params(shape.c_prev_prev, shape.c_out, cfg);
  const int eff_c0 = shape.reduce_prev_prev ? shape.c_out : shape.c_prev_prev;

  auto op_params = [&](int input_index, OpKind op) {
    const int c = input_index == 0   ? eff_c0
                  : input_index == 1 ? shape.c_prev
                                     : shape.c_out;
    const int stride = (reduction && input_index < 2) ? 2 : 1;
    switch (op) {
      case OpKind::kSepConv3:
        total += sep_conv_params(3, c, shape.c_out, cfg);
        break;
      case OpKind::kSepConv5:
        total += sep_conv_params(5, c, shape.c_out, cfg);
        break;
      case OpKind::kIdentity:
        // Identity cannot change width or stride on its own.
        if ((c != shape.c_out || stride != 1) && cfg.include_projection_ops)
          total += projection_params(c, shape.c_out, cfg);
        break;
      case OpKind::kAvgPool3:
      case OpKind::kMaxPool3:
        // Pooling strides natively; only width mismatches need projecting.
        if (c != shape.c_out && cfg.include_projection_ops)
          total += projection_params(c, shape.c_out, cfg);
        break;
    }
  };
  for (const NodeSpec& node : g.nodes) {
    op_params(node.in_a, node.op_a);
    op_params(node.in_b, node.op_b);
  }
  if (cfg.include_projection_ops) {
    const int64_t concat =
        static_cast<int64_t>(loose_ends(g).size()) * shape.c_out;
    total += concat * shape.c_out;
    if (cfg.include_conv_bias) total += shape.c_out;
    if (cfg.include_batchnorm_affine)
      total += 2 * static_cast<int64_t>(shape.c_out);
  }
  return total;
}

int64_t network_param_count(const NetworkSpec& net, const CountingConfig& cfg) {
  if (const CellStackNet* cells = net.as_cells()) {
    int64_t total = 9LL * cells->input_channels * cells->stem_channels;
    if (cfg.include_conv_bias) total += cells->stem_channels;
    if (cfg.include_batchnorm_affine)
      total += 2 * static_cast<int64_t>(cells->stem_channels);
    for (const CellShape& shape : cells->cells) {
      const CellGenotype& g = shape.tag == CellTag::kReduction
                                  ? cells->arch.reduction
                                  : cells->arch.normal;
      total += cell_instance_param_count(g, shape, cfg);
    }
    const int c_final = cells->cells.back().c_out;
    total += static_cast<int64_t>(c_final) * cells->plan.num_classes +
             cells->plan.num_classes;  // head linear keeps its bias
    return total;
  }
  // Plain networks are counted as declared; the counting convention flags
  // describe the cell space, not the canonical baselines.
  const LayerNet& layers = *net.as_layers();
  int64_t total = 0;
  for (const PlainLayer& l : layers.layers) {
    if (l.kind == PlainLayer::Kind::kConv) {
      total += static_cast<int64_t>(l.kernel) * l.kernel * l.in_ch * l.out_ch;
      if (l.bias) total += l.out_ch;
    } else if (l.kind == PlainLayer::Kind::kLinear) {
      total += static_cast<int64_t>(l.in_ch) * l.out_ch;
      if (l.bias) total += l.out_ch;
    }
  }
  return total;
}

std::string network_manifest_json(const NetworkSpec& net,
                                  const CountingConfig& cfg) {
  nlohmann::json doc;
  doc["counting"] = {{"batchnorm_affine", cfg.include_batchnorm_affine},
                     {"conv_bias", cfg.include_conv_bias},
                     {"projection_ops", cfg.include_projection_ops}};
  doc["total_parameters"] = network_param_count(net, cfg);
  if (const CellStackNet* cells = net.as_cells()) {
    doc["kind"] = "cell_stack";
    doc["variant"] = cells->label;
    doc["base_channels"] = cells->plan.base_channels;
    doc["num_classes"] = cells->plan.num_classes;
    doc["input_channels"] = cells->input_channels;
    doc["B"] = cells->arch.normal.node_count();
    std::string tags;
    for (CellTag t : cells->plan.cells)
      tags += t == CellTag::kReduction ? 'R' : 'N';
    doc["cells"] = tags;
    doc["genotype"] = nlohmann::json::parse(arch_to_json(cells->arch));
  } else {
    const LayerNet& layers = *net.as_layers();
    doc["kind"] = "plain";
    doc["variant"] = layers.label;
    doc["num_classes"] = layers.num_classes;
    doc["input_channels"] = layers.input_channels;
  }
  return doc.dump(2) + "\n";
}

NetworkSpec network_from_manifest_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("network manifest: bad JSON: ") +
                          e.what());
  }
  const std::string kind = doc.value("kind", "");
  if (kind == "plain") {
    return build_alexnet(doc["num_classes"].get<int>(), 224);
  }
  if (kind != "cell_stack")
    throw ValidationError("network manifest: unknown kind \"" + kind + "\"");
  const ArchPair arch = arch_from_json(doc["genotype"].dump());
  StackPlan plan;
  plan.base_channels = doc["base_channels"].get<int>();
  plan.num_classes = doc["num_classes"].get<int>();
  for (char t : doc["cells"].get<std::string>()) {
    if (t == 'N')
      plan.cells.push_back(CellTag::kNormal);
    else if (t == 'R')
      plan.cells.push_back(CellTag::kReduction);
    else
      throw ValidationError("network manifest: bad cell tag");
  }
  return build_network(arch, plan, doc.value("variant", "custom"),
                       doc.value("input_channels", 1));
}

}  // namespace usnas
