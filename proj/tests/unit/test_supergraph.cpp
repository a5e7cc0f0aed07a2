#include <algorithm>
#include <filesystem>

#include "doctest.h"
#include "usnas/common.hpp"
#include "usnas/supergraph.hpp"

using namespace usnas;
using nn::BnMode;
using nn::Graph;
using nn::Tensor;

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

Tensor random_batch(long n, long c, long side, Rng& rng) {
  Tensor x(std::vector<long>{n, c, side, side});
  for (long i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
  return x;
}

StackPlan small_plan() {
  StackPlan plan;
  plan.cells = {CellTag::kNormal, CellTag::kReduction, CellTag::kNormal};
  plan.base_channels = 4;
  plan.num_classes = 2;
  return plan;
}

}  // namespace

TEST_CASE("activation routes through shared weights") {
  Rng rng(31);
  SharedSupergraph super(small_plan(), 2, 1, CountingConfig{}, 5);
  const ArchPair arch{random_genotype(2, rng), random_genotype(2, rng)};
  ChildView view = activate_subnetwork(super, arch);
  const Tensor input = random_batch(2, 1, 8, rng);

  auto run = [&] {
    Graph g;
    Graph::Ref out = view.forward(g, g.constant(input), BnMode::kBatchStats);
    return g.value(out);
  };
  const Tensor before = run();
  CHECK(before.shape() == std::vector<long>{2, 2});

  // evaluation is repeatable and mutation-free
  const Tensor again = run();
  for (long i = 0; i < before.numel(); ++i) CHECK(before[i] == again[i]);

  // perturbing one shared container changes the output of a fresh view
  std::vector<nn::Parameter*> params = super.parameters();
  params.front()->value[0] += 0.5;
  ChildView view2 = activate_subnetwork(super, arch);
  Graph g2;
  const Tensor after =
      g2.value(view2.forward(g2, g2.constant(input), BnMode::kBatchStats));
  bool changed = false;
  for (long i = 0; i < after.numel(); ++i)
    changed = changed || after[i] != before[i];
  CHECK(changed);
}

TEST_CASE("activation allocates no new trainable containers") {
  Rng rng(32);
  SharedSupergraph super(small_plan(), 2, 1, CountingConfig{}, 7);
  const size_t count_before = super.container_count();
  for (int i = 0; i < 5; ++i) {
    const ArchPair arch{random_genotype(2, rng), random_genotype(2, rng)};
    ChildView view = activate_subnetwork(super, arch);
    Graph g;
    view.forward(g, g.constant(random_batch(1, 1, 8, rng)),
                 BnMode::kBatchStats);
    CHECK(super.container_count() == count_before);
  }
}

TEST_CASE("container count is independent of sampled genotypes") {
  SharedSupergraph a(small_plan(), 3, 1, CountingConfig{}, 1);
  SharedSupergraph b(small_plan(), 3, 1, CountingConfig{}, 99);
  CHECK(a.container_count() == b.container_count());
}

TEST_CASE("coinciding sites share weights across views") {
  // Two archs differ only in node 1's second op, which reads node 0. Zeroing
  // node 0's containers makes that input the zero tensor, every candidate op
  // maps zero to zero (biases off, beta zero), so the outputs must coincide
  // through the shared remaining sites.
  Rng rng(33);
  StackPlan plan;
  plan.cells = {CellTag::kNormal};
  plan.base_channels = 3;
  plan.num_classes = 2;
  SharedSupergraph super(plan, 2, 1, CountingConfig{}, 11);

  const CellGenotype reduction{{{0, OpKind::kIdentity, 1, OpKind::kIdentity},
                                {0, OpKind::kIdentity, 1, OpKind::kIdentity}}};
  ArchPair arch1{CellGenotype{{{0, OpKind::kSepConv3, 1, OpKind::kSepConv3},
                               {0, OpKind::kSepConv3, 2, OpKind::kSepConv5}}},
                 reduction};
  ArchPair arch2{CellGenotype{{{0, OpKind::kSepConv3, 1, OpKind::kSepConv3},
                               {0, OpKind::kSepConv3, 2, OpKind::kMaxPool3}}},
                 reduction};

  for (nn::Parameter* p : super.parameters())
    if (p->name.find(".n0.") != std::string::npos) p->value.zero();

  const Tensor input = random_batch(2, 1, 6, rng);
  Graph g1, g2;
  const Tensor out1 =
      g1.value(activate_subnetwork(super, arch1)
                   .forward(g1, g1.constant(input), BnMode::kBatchStats));
  const Tensor out2 =
      g2.value(activate_subnetwork(super, arch2)
                   .forward(g2, g2.constant(input), BnMode::kBatchStats));
  REQUIRE(out1.numel() == out2.numel());
  bool nontrivial = false;
  for (long i = 0; i < out1.numel(); ++i) {
    CHECK(out1[i] == doctest::Approx(out2[i]).epsilon(1e-12));
    nontrivial = nontrivial || out1[i] != 0.0;
  }
  CHECK(nontrivial);
}

TEST_CASE("training a view updates shared containers in place") {
  Rng rng(34);
  SharedSupergraph super(small_plan(), 2, 1, CountingConfig{}, 3);
  const ArchPair arch{random_genotype(2, rng), random_genotype(2, rng)};
  ChildView view = activate_subnetwork(super, arch);

  Graph g;
  Graph::Ref logits = view.forward(g, g.constant(random_batch(4, 1, 8, rng)),
                                   BnMode::kTrain);
  Graph::Ref loss = g.softmax_cross_entropy(logits, {0, 1, 0, 1});
  g.backward(loss);
  const std::vector<nn::Parameter*> touched = g.bound_parameters();
  CHECK(touched.size() > 0);
  bool any_nonzero_grad = false;
  for (nn::Parameter* p : touched)
    for (long i = 0; i < p->numel(); ++i)
      any_nonzero_grad = any_nonzero_grad || p->grad[i] != 0.0;
  CHECK(any_nonzero_grad);
  // every touched container belongs to the supergraph
  const std::vector<nn::Parameter*> all = super.parameters();
  for (nn::Parameter* p : touched)
    CHECK(std::find(all.begin(), all.end(), p) != all.end());
  for (nn::Parameter* p : all) p->zero_grad();
}

TEST_CASE("activation rejects mismatched node counts") {
  Rng rng(35);
  SharedSupergraph super(small_plan(), 2, 1, CountingConfig{}, 3);
  const ArchPair arch{random_genotype(3, rng), random_genotype(3, rng)};
  CHECK_THROWS_AS(activate_subnetwork(super, arch), ValidationError);
}

TEST_CASE("fixed network forward and checkpoint round-trip") {
  Rng rng(36);
  const ArchPair arch{random_genotype(3, rng), random_genotype(3, rng)};
  StackPlan plan = make_stack_plan(StackVariant::kEnas7, 4, 2);
  const NetworkSpec spec = build_network(arch, plan, "ENAS7");
  FixedNetwork net(spec, CountingConfig{}, 17);

  const Tensor input = random_batch(2, 1, 16, rng);
  Graph g;
  const Tensor out =
      g.value(net.forward(g, g.constant(input), BnMode::kBatchStats));
  CHECK(out.shape() == std::vector<long>{2, 2});

  const auto path = std::filesystem::temp_directory_path() / "usnas_ckpt.bin";
  net.save(path);
  FixedNetwork restored(spec, CountingConfig{}, 999);  // different init
  restored.load(path);
  Graph g2;
  const Tensor out2 =
      g2.value(restored.forward(g2, g2.constant(input), BnMode::kBatchStats));
  for (long i = 0; i < out.numel(); ++i) CHECK(out[i] == out2[i]);

  // architecture mismatch is caught by the name check
  ArchPair other = arch;
  other.normal.nodes[2].op_a = other.normal.nodes[2].op_a == OpKind::kSepConv3
                                   ? OpKind::kSepConv5
                                   : OpKind::kSepConv3;
  FixedNetwork wrong(build_network(other, plan, "ENAS7"), CountingConfig{}, 0);
  CHECK_THROWS_AS(wrong.load(path), IoError);
  std::filesystem::remove(path);
}
