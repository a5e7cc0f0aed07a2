#include "usnas/genotype.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "usnas/common.hpp"

namespace usnas {

namespace {

const std::array<std::string_view, kNumOps> kOpNames = {"identity", "sep3",
                                                        "sep5", "avg3", "max3"};

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

std::string_view op_name(OpKind op) {
  return kOpNames[static_cast<size_t>(op)];
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (int i = 0; i < kNumOps; ++i) {
    if (kOpNames[static_cast<size_t>(i)] == name)
      return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

std::string ValidationResult::joined() const {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v;
  }
  return out;
}

ValidationResult validate(const CellGenotype& g, int expected_node_count) {
  ValidationResult result;
  if (g.node_count() != expected_node_count) {
    result.violations.push_back("cell has " + std::to_string(g.node_count()) +
                                " nodes, expected " +
                                std::to_string(expected_node_count));
  }
  for (int i = 0; i < g.node_count(); ++i) {
    const NodeSpec& node = g.nodes[static_cast<size_t>(i)];
    const int bound = i + 2;
    auto check = [&](int index, const char* field) {
      if (index < 0 || index >= bound) {
        result.violations.push_back(
            "node " + std::to_string(i) + " " + field + " " +
            std::to_string(index) + " out of range [0," +
            std::to_string(bound) + ")");
      }
    };
    check(node.in_a, "input");
    check(node.in_b, "input");
  }
  return result;
}

std::vector<int> encode(const CellGenotype& g) {
  ValidationResult check = validate(g, g.node_count());
  if (!check.ok())
    throw ValidationError("encode: invalid genotype: " + check.joined());
  std::vector<int> seq;
  seq.reserve(static_cast<size_t>(4 * g.node_count()));
  for (const NodeSpec& node : g.nodes) {
    seq.push_back(node.in_a);
    seq.push_back(static_cast<int>(node.op_a));
    seq.push_back(node.in_b);
    seq.push_back(static_cast<int>(node.op_b));
  }
  return seq;
}

CellGenotype decode(const std::vector<int>& seq, int node_count) {
  if (node_count < 1)
    throw ValidationError("decode: node count must be >= 1, got " +
                          std::to_string(node_count));
  if (static_cast<int>(seq.size()) != 4 * node_count) {
    throw ValidationError(
        "decode: sequence length " + std::to_string(seq.size()) +
        " does not match 4*B = " + std::to_string(4 * node_count));
  }
  CellGenotype g;
  g.nodes.resize(static_cast<size_t>(node_count));
  for (int i = 0; i < node_count; ++i) {
    const size_t base = static_cast<size_t>(4 * i);
    auto input_at = [&](size_t k) {
      const int v = seq[base + k];
      if (v < 0 || v >= i + 2) {
        throw ValidationError("decode: node " + std::to_string(i) +
                              " input index " + std::to_string(v) +
                              " out of range [0," + std::to_string(i + 2) +
                              ")");
      }
      return v;
    };
    auto op_at = [&](size_t k) {
      const int v = seq[base + k];
      if (v < 0 || v >= kNumOps) {
        throw ValidationError("decode: node " + std::to_string(i) +
                              " op index " + std::to_string(v) +
                              " out of range [0," + std::to_string(kNumOps) +
                              ")");
      }
      return static_cast<OpKind>(v);
    };
    NodeSpec& node = g.nodes[static_cast<size_t>(i)];
    node.in_a = input_at(0);
    node.op_a = op_at(1);
    node.in_b = input_at(2);
    node.op_b = op_at(3);
  }
  return g;
}

std::vector<int> loose_ends(const CellGenotype& g) {
  std::vector<bool> used(static_cast<size_t>(g.node_count()), false);
  for (const NodeSpec& node : g.nodes) {
    if (node.in_a >= 2) used[static_cast<size_t>(node.in_a - 2)] = true;
    if (node.in_b >= 2) used[static_cast<size_t>(node.in_b - 2)] = true;
  }
  std::vector<int> loose;
  for (int i = 0; i < g.node_count(); ++i) {
    if (!used[static_cast<size_t>(i)]) loose.push_back(i);
  }
  return loose;
}

int64_t cell_param_count(const CellGenotype& g, int c_in, int c_out,
                         const CountingConfig& cfg) {
  ValidationResult check = validate(g, g.node_count());
  if (!check.ok())
    throw ValidationError("cell_param_count: invalid genotype: " +
                          check.joined());
  if (c_in < 1 || c_out < 1)
    throw ValidationError("cell_param_count: channel counts must be >= 1");

  int64_t total = 0;
  auto op_params = [&](int input_index, OpKind op) {
    const int c = input_index < 2 ? c_in : c_out;
    switch (op) {
      case OpKind::kSepConv3:
        total += sep_conv_params(3, c, c_out, cfg);
        break;
      case OpKind::kSepConv5:
        total += sep_conv_params(5, c, c_out, cfg);
        break;
      case OpKind::kIdentity:
      case OpKind::kAvgPool3:
      case OpKind::kMaxPool3:
        if (c != c_out && cfg.include_projection_ops)
          total += projection_params(c, c_out, cfg);
        break;
    }
  };
  for (const NodeSpec& node : g.nodes) {
    op_params(node.in_a, node.op_a);
    op_params(node.in_b, node.op_b);
  }
  if (cfg.include_projection_ops) {
    const int64_t concat =
        static_cast<int64_t>(loose_ends(g).size()) * c_out;
    total += concat * c_out;
    if (cfg.include_conv_bias) total += c_out;
    if (cfg.include_batchnorm_affine) total += 2 * static_cast<int64_t>(c_out);
  }
  return total;
}

std::string to_dot(const CellGenotype& g, const std::string& title) {
  ValidationResult check = validate(g, g.node_count());
  if (!check.ok())
    throw ValidationError("to_dot: invalid genotype: " + check.joined());

  auto escape = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out;
  };
  auto vertex = [](int input_index) {
    if (input_index == 0) return std::string("in0");
    if (input_index == 1) return std::string("in1");
    return "n" + std::to_string(input_index - 2);
  };

  std::ostringstream out;
  out << "digraph cell {\n";
  out << "  label=\"" << escape(title) << "\";\n";
  out << "  rankdir=LR;\n";
  out << "  in0 [label=\"h[k-2]\" shape=box];\n";
  out << "  in1 [label=\"h[k-1]\" shape=box];\n";
  for (int i = 0; i < g.node_count(); ++i) {
    out << "  n" << i << " [label=\"add " << i << "\"];\n";
  }
  out << "  concat [label=\"concat\" shape=box];\n";
  for (int i = 0; i < g.node_count(); ++i) {
    const NodeSpec& node = g.nodes[static_cast<size_t>(i)];
    out << "  " << vertex(node.in_a) << " -> n" << i << " [label=\""
        << op_name(node.op_a) << "\"];\n";
    out << "  " << vertex(node.in_b) << " -> n" << i << " [label=\""
        << op_name(node.op_b) << "\"];\n";
  }
  for (int i : loose_ends(g)) {
    out << "  n" << i << " -> concat;\n";
  }
  out << "}\n";
  return out.str();
}

namespace {

nlohmann::json cell_to_json(const CellGenotype& g) {
  nlohmann::json rows = nlohmann::json::array();
  for (const NodeSpec& node : g.nodes) {
    rows.push_back({node.in_a, std::string(op_name(node.op_a)), node.in_b,
                    std::string(op_name(node.op_b))});
  }
  return rows;
}

CellGenotype cell_from_json(const nlohmann::json& rows, int node_count,
                            const char* which) {
  if (!rows.is_array() || static_cast<int>(rows.size()) != node_count) {
    throw ValidationError(std::string("genotype document: ") + which +
                          " cell must list exactly B=" +
                          std::to_string(node_count) + " nodes");
  }
  CellGenotype g;
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != 4)
      throw ValidationError(std::string("genotype document: ") + which +
                            " node rows must be [in_a, op_a, in_b, op_b]");
    NodeSpec node;
    node.in_a = row[0].get<int>();
    node.in_b = row[2].get<int>();
    auto parse_op = [&](const nlohmann::json& j) {
      const auto name = j.get<std::string>();
      auto op = op_from_name(name);
      if (!op)
        throw ValidationError("genotype document: unknown op name \"" + name +
                              "\"");
      return *op;
    };
    node.op_a = parse_op(row[1]);
    node.op_b = parse_op(row[3]);
    g.nodes.push_back(node);
  }
  ValidationResult check = validate(g, node_count);
  if (!check.ok())
    throw ValidationError(std::string("genotype document: ") + which +
                          " cell invalid: " + check.joined());
  return g;
}

}  // namespace

std::string arch_to_json(const ArchPair& arch) {
  if (arch.normal.node_count() != arch.reduction.node_count())
    throw ValidationError("arch_to_json: normal and reduction cells disagree "
                          "on node count");
  nlohmann::json doc;
  doc["B"] = arch.normal.node_count();
  doc["normal"] = cell_to_json(arch.normal);
  doc["reduction"] = cell_to_json(arch.reduction);
  return doc.dump(2) + "\n";
}

ArchPair arch_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("genotype document: bad JSON: ") +
                          e.what());
  }
  if (!doc.contains("B") || !doc.contains("normal") ||
      !doc.contains("reduction"))
    throw ValidationError(
        "genotype document: fields B, normal, reduction are required");
  const int node_count = doc["B"].get<int>();
  if (node_count < 1)
    throw ValidationError("genotype document: B must be >= 1");
  ArchPair arch;
  arch.normal = cell_from_json(doc["normal"], node_count, "normal");
  arch.reduction = cell_from_json(doc["reduction"], node_count, "reduction");
  return arch;
}

ArchPair load_arch(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open genotype file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return arch_from_json(buf.str());
}

void save_arch(const ArchPair& arch, const std::filesystem::path& path) {
  const std::string text = arch_to_json(arch);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write genotype file " + path.string());
  out << text;
}

}  // namespace usnas
