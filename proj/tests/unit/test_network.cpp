#include "doctest.h"
#include "usnas/common.hpp"
#include "usnas/network.hpp"
#include "usnas/supergraph.hpp"

using namespace usnas;

namespace {

CellGenotype random_genotype(int b, Rng& rng) {
  CellGenotype g;
  for (int i = 0; i < b; ++i) {
    NodeSpec node;
    node.in_a = static_cast<int>(rng.uniform_int(i + 2));
    node.in_b = static_cast<int>(rng.uniform_int(i + 2));
    node.op_a = static_cast<OpKind>(rng.uniform_int(kNumOps));
    node.op_b = static_cast<OpKind>(rng.uniform_int(kNumOps));
    g.nodes.push_back(node);
  }
  return g;
}

ArchPair identity_arch(int b) {
  CellGenotype g;
  for (int i = 0; i < b; ++i)
    g.nodes.push_back({0, OpKind::kIdentity, 1, OpKind::kIdentity});
  return {g, g};
}

std::string plan_tags(const StackPlan& plan) {
  std::string tags;
  for (CellTag t : plan.cells) tags += t == CellTag::kReduction ? 'R' : 'N';
  return tags;
}

}  // namespace

TEST_CASE("stack plans match the published layer sequences") {
  CHECK(plan_tags(make_stack_plan(StackVariant::kEnas7, 20, 2)) == "NRNRNNN");
  CHECK(plan_tags(make_stack_plan(StackVariant::kEnas17, 20, 2)) ==
        "NNNNNRNNNNNRNNNNN");
  CHECK(make_stack_plan(StackVariant::kEnas7, 20, 2).cells.size() == 7);
  CHECK(make_stack_plan(StackVariant::kEnas17, 20, 2).cells.size() == 17);
  for (StackVariant v : {StackVariant::kEnas7, StackVariant::kEnas17}) {
    int reductions = 0;
    for (CellTag t : make_stack_plan(v, 20, 2).cells)
      if (t == CellTag::kReduction) ++reductions;
    CHECK(reductions == 2);
  }
}

TEST_CASE("channel schedule doubles at reductions") {
  const StackPlan plan = make_stack_plan(StackVariant::kEnas7, 8, 2);
  const NetworkSpec net = build_network(identity_arch(3), plan);
  const CellStackNet& cells = *net.as_cells();
  REQUIRE(cells.cells.size() == 7);
  CHECK(cells.cells.back().c_out == 8 * 4);
  CHECK(cells.cells[0].c_out == 8);
  CHECK(cells.cells[1].c_out == 16);
  CHECK(cells.cells[3].c_out == 32);
  // prev-prev scale mismatches appear right after each reduction
  CHECK_FALSE(cells.cells[0].reduce_prev_prev);
  CHECK(cells.cells[2].reduce_prev_prev);
  CHECK(cells.cells[4].reduce_prev_prev);

  const NetworkSpec net17 = build_network(
      identity_arch(3), make_stack_plan(StackVariant::kEnas17, 8, 2));
  CHECK(net17.as_cells()->cells.size() == 17);
}

TEST_CASE("forward_shapes tracks ceiling halving and final logits") {
  const StackPlan plan = make_stack_plan(StackVariant::kEnas7, 8, 2);
  const NetworkSpec net = build_network(identity_arch(2), plan);
  auto shapes = forward_shapes(net, {100, 100, 1});
  REQUIRE(shapes.size() == 1 + 7 + 1);
  CHECK(shapes[0] == std::vector<long>{100, 100, 8});
  CHECK(shapes[2] == std::vector<long>{50, 50, 16});
  CHECK(shapes[4] == std::vector<long>{25, 25, 32});
  CHECK(shapes[7] == std::vector<long>{25, 25, 32});
  CHECK(shapes.back() == std::vector<long>{2});

  const NetworkSpec net17 = build_network(
      identity_arch(2), make_stack_plan(StackVariant::kEnas17, 8, 2));
  CHECK(forward_shapes(net17, {100, 100, 1}).back() == std::vector<long>{2});

  // 1x1 input survives reductions under ceiling semantics
  auto tiny = forward_shapes(net, {1, 1, 1});
  CHECK(tiny[2] == std::vector<long>{1, 1, 16});

  // deterministic
  CHECK(forward_shapes(net, {100, 100, 1}) == shapes);

  CHECK_THROWS_AS(forward_shapes(net, {50, 50, 3}), ValidationError);
}

TEST_CASE("alexnet reproduces the canonical parameter count") {
  const NetworkSpec canonical = build_alexnet(1000, 224);
  CHECK(network_param_count(canonical, CountingConfig{}) == 61100840);

  // final linear layer at two classes
  const NetworkSpec two = build_alexnet(2, 224);
  const LayerNet& layers = *two.as_layers();
  const PlainLayer& last = layers.layers.back();
  CHECK(static_cast<int64_t>(last.in_ch) * last.out_ch + last.out_ch == 8194);

  // the paper's baseline resolution; count reported against Table 1
  const NetworkSpec paper = build_alexnet(2, 100);
  const int64_t count = network_param_count(paper, CountingConfig{});
  const double deviation =
      std::abs(static_cast<double>(count) - 56858656.0) / 56858656.0;
  CHECK(deviation < 0.02);

  CHECK_THROWS_AS(build_alexnet(2, 62), ValidationError);
  CHECK(forward_shapes(build_alexnet(2, 63), {63, 63, 3}).back() ==
        std::vector<long>{2});
}

TEST_CASE("alexnet enumeration equals the analytic count") {
  const NetworkSpec spec = build_alexnet(1000, 224);
  FixedNetwork net(spec, CountingConfig{}, 0);
  CHECK(net.enumerated_param_count() == 61100840);
}

TEST_CASE("head-only arithmetic: stem plus linear head") {
  // one all-identity cell with counting flags off leaves stem, the output
  // projection and the head; all enumerable by hand
  CountingConfig cfg{false, false, true};
  StackPlan plan;
  plan.cells = {CellTag::kNormal};
  plan.base_channels = 8;
  plan.num_classes = 2;
  const NetworkSpec net = build_network(identity_arch(1), plan);
  // stem 9*1*8, output projection 1*8*8 (one loose node), head 8*2+2
  CHECK(network_param_count(net, cfg) == 72 + 64 + 18);
}

TEST_CASE("network_param_count equals exhaustive container enumeration") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int b = 1 + static_cast<int>(rng.uniform_int(4));
    const ArchPair arch{random_genotype(b, rng), random_genotype(b, rng)};
    const StackVariant variant =
        trial % 2 == 0 ? StackVariant::kEnas7 : StackVariant::kEnas17;
    const int base = 2 + static_cast<int>(rng.uniform_int(10));
    StackPlan plan = make_stack_plan(variant, base, 2);
    CountingConfig cfg;
    cfg.include_batchnorm_affine = rng.uniform() < 0.5;
    cfg.include_conv_bias = rng.uniform() < 0.5;
    const NetworkSpec spec = build_network(arch, plan);
    FixedNetwork net(spec, cfg, rng.next_u64());
    CHECK(network_param_count(spec, cfg) == net.enumerated_param_count());
  }
}

TEST_CASE("network manifest round-trips the architecture") {
  Rng rng(22);
  const ArchPair arch{random_genotype(4, rng), random_genotype(4, rng)};
  StackPlan plan = make_stack_plan(StackVariant::kEnas7, 12, 2);
  const NetworkSpec spec = build_network(arch, plan, "ENAS7");
  CountingConfig cfg;
  const std::string doc = network_manifest_json(spec, cfg);
  const NetworkSpec back = network_from_manifest_json(doc);
  CHECK(back.as_cells() != nullptr);
  CHECK(back.as_cells()->arch == arch);
  CHECK(back.as_cells()->plan == spec.as_cells()->plan);
  CHECK(network_param_count(back, cfg) == network_param_count(spec, cfg));
}

TEST_CASE("build_network rejects invalid input") {
  StackPlan plan = make_stack_plan(StackVariant::kEnas7, 8, 2);
  ArchPair bad = identity_arch(2);
  bad.normal.nodes[1].in_a = 9;
  CHECK_THROWS_AS(build_network(bad, plan), ValidationError);
  ArchPair mismatched{identity_arch(2).normal, identity_arch(3).reduction};
  CHECK_THROWS_AS(build_network(mismatched, plan), ValidationError);
  CHECK_THROWS_AS(make_stack_plan(StackVariant::kEnas7, 0, 2),
                  ValidationError);
  CHECK_THROWS_AS(make_stack_plan(StackVariant::kEnas7, 8, 1),
                  ValidationError);
}
