#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "modulenet/dataset.hpp"
#include "modulenet/evaluator.hpp"
#include "modulenet/knowledge_base.hpp"
#include "modulenet/model_zoo.hpp"
#include "test_support.hpp"

using namespace modulenet;
using namespace testing_support;

namespace {

bool params_bit_equal(Network& a, Network& b) {
  auto pa = a.export_params(), pb = b.export_params();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || !pa[i].tensor.bit_equal(pb[i].tensor)) return false;
  }
  return true;
}

Dataset tiny_dataset(int classes = 4) {
  SynthOptions o;
  o.resolution = 8;
  o.noise = 0.5f;
  return synth_dataset(3, classes, 12, o);
}

}  // namespace

TEST(ModelZoo, BuildIsDeterministic) {
  auto zoo = default_zoo(3, make_head_spec({32}, 10));
  for (const auto& spec : zoo) {
    Network a = build_seed(spec, 9), b = build_seed(spec, 9), c = build_seed(spec, 10);
    EXPECT_TRUE(params_bit_equal(a, b)) << spec.name;
    EXPECT_FALSE(params_bit_equal(a, c)) << spec.name;
  }
}

TEST(ModelZoo, MiniVggHeadInputFeatures) {
  auto spec = make_plain_arch("mini-vgg", {16, 32, 64}, 1, make_head_spec({128, 128}, 10));
  Network net = build_seed(spec, 1);
  EXPECT_EQ(net.head.front().spec.in_channels, 64 * 4 * 4);
  Tensor logits = net.forward(Tensor({2, 3, 32, 32}, 0.5f), Mode::eval);
  EXPECT_EQ(logits.dims(), (std::vector<int>{2, 10}));
  // three fully connected layers: 1024-128-128-10
  int linear = 0;
  for (const auto& l : net.head) linear += l.spec.kind == LayerKind::linear;
  EXPECT_EQ(linear, 3);
}

TEST(ModelZoo, InconsistentChainsRejected) {
  auto h = make_head_spec({8}, 4);
  auto spec = make_residual_arch("r", {8, 16}, 2, h);
  spec.cells[0].layers[1].in_channels = 5;
  EXPECT_THROW(build_seed(spec, 1), std::invalid_argument);
  auto identity_short = make_residual_arch("r", {8, 16}, 1, h);
  identity_short.cells[0].layers[0].projection = false;  // identity shortcut cannot map 3 -> 8
  EXPECT_THROW(build_seed(identity_short, 1), std::invalid_argument);
  auto plain = make_plain_arch("p", {8, 16}, 1, h);
  plain.cells[1].in_channels = 7;
  EXPECT_THROW(build_seed(plain, 1), std::invalid_argument);
  auto no_reduction = make_plain_arch("p", {8}, 1, h);
  no_reduction.cells[0].layers.pop_back();
  EXPECT_THROW(validate_arch(no_reduction), std::invalid_argument);
}

TEST(ModelZoo, SharedResolutionSchedule) {
  auto zoo = default_zoo(3, make_head_spec({16}, 10));
  for (const auto& spec : zoo) {
    Network net = build_seed(spec, 2);
    Tensor h({1, 3, 32, 32}, 1.0f);
    for (int j = 0; j < 3; ++j) {
      EXPECT_EQ(h.h(), 32 >> j) << spec.name;
      h = forward_sequence(net.cells[static_cast<size_t>(j)], h, Mode::eval);
    }
    EXPECT_EQ(h.h(), 4);
  }
}

TEST(ModelZoo, ZeroEpochsIsNoOp) {
  auto zoo = tiny_zoo();
  Dataset ds = tiny_dataset();
  Network net = build_seed(zoo[0], 4);
  Network copy = net;
  auto res = train_seed(net, ds, 0, TrainOptions{});
  EXPECT_TRUE(params_bit_equal(res.network, copy));
  EXPECT_TRUE(res.history.epochs.empty());
}

TEST(ModelZoo, TrainingHistoryFiniteAndValAccuracyReproducible) {
  auto zoo = tiny_zoo();
  Dataset ds = tiny_dataset();
  for (const auto& spec : zoo) {
    TrainOptions opt;
    opt.sgd.lr = 0.02f;
    opt.batch_size = 8;
    auto res = train_seed(build_seed(spec, 6), ds, 2, opt);
    ASSERT_TRUE(res.history.finite);
    for (double l : res.history.losses()) EXPECT_TRUE(std::isfinite(l));
    EXPECT_EQ(accuracy(res.network, ds, ds.val), res.history.epochs.back().val_accuracy) << spec.name;
  }
}

TEST(ArchText, ParseMatchesBuilders) {
  auto h = make_head_spec({16}, 10);
  auto a = parse_arch("x", "plain 8,16,32 depth=2", h);
  auto b = make_plain_arch("x", {8, 16, 32}, 2, h);
  ASSERT_EQ(a.cells.size(), 3u);
  for (size_t j = 0; j < 3; ++j) {
    ASSERT_EQ(a.cells[j].layers.size(), b.cells[j].layers.size());
    for (size_t i = 0; i < a.cells[j].layers.size(); ++i) EXPECT_EQ(a.cells[j].layers[i], b.cells[j].layers[i]);
  }
  EXPECT_EQ(parse_arch("r", "residual 8,16", h).family, Family::residual);
  EXPECT_THROW(parse_arch("x", "dense 8", h), std::invalid_argument);
  EXPECT_THROW(parse_arch("x", "plain 8 width=3", h), std::invalid_argument);
}

TEST(Decompose, PositionsResolutionsAndFreezing) {
  auto spec = make_plain_arch("mini-vgg", {16, 32, 64}, 1, make_head_spec({16}, 10));
  Network net = build_seed(spec, 3);
  auto recs = decompose(net, 1, 3);
  ASSERT_EQ(recs.size(), 3u);
  const int res[] = {32, 16, 8};
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(recs[static_cast<size_t>(j)].position, j + 1);
    EXPECT_EQ(recs[static_cast<size_t>(j)].in_resolution, res[j]);
    EXPECT_EQ(recs[static_cast<size_t>(j)].out_resolution, res[j] / 2);
    for (auto& l : recs[static_cast<size_t>(j)].layers) EXPECT_TRUE(l.all_frozen());
  }
  EXPECT_THROW(decompose(net, 1, 2), std::invalid_argument);

  // a training step on a frozen record leaves it bit-identical
  auto& layers = recs[0].layers;
  Tensor w = layers[0].params.get("weight").value;
  Rng rng(4);
  Tensor y = forward_sequence(layers, random_tensor({2, 3, 32, 32}, rng), Mode::train);
  backward_sequence(layers, random_tensor(y.dims(), rng), false);
  for (auto& l : layers) l.for_each_param("", [](const std::string&, Param& p) { sgd_step(p, SgdConfig{}); });
  EXPECT_TRUE(layers[0].params.get("weight").value.bit_equal(w));
}

TEST(KnowledgeBase, UniformGenotypesReproduceSeedLogits) {
  auto zoo = tiny_zoo();
  auto seeds = tiny_seeds(zoo);
  // move BN statistics away from their defaults
  Dataset ds = tiny_dataset();
  for (auto& s : seeds) {
    train_network(s, ds, TrainOptions{1, 8, {}, Mode::train, 0, false, 1, false});
  }
  auto kb = tiny_kb(seeds, zoo);
  Rng rng(5);
  Tensor x = random_tensor({3, 3, 8, 8}, rng);
  for (int i = 1; i <= kb.n; ++i) {
    Network net = assemble(Genotype::uniform(i, 2), kb);
    for (const auto& a : net.adapters) EXPECT_EQ(a.plan.kind, AdapterKind::identity);
    net.head = seeds[static_cast<size_t>(i - 1)].head;
    EXPECT_TRUE(net.forward(x, Mode::eval).bit_equal(seeds[static_cast<size_t>(i - 1)].forward(x, Mode::eval)));
  }
}

TEST(KnowledgeBase, ValidateFindsInjectedFaults) {
  auto zoo = tiny_zoo();
  auto seeds = tiny_seeds(zoo);
  auto kb = tiny_kb(seeds, zoo);
  EXPECT_TRUE(validate(kb).empty());

  auto bad_res = kb;
  bad_res.slot(2, 3)->in_resolution = 5;
  auto d = validate(bad_res);
  ASSERT_GE(d.size(), 1u);
  EXPECT_NE(d[0].find("(2, 3)"), std::string::npos);
  size_t mentions = 0;
  for (const auto& m : d) mentions += m.find("(2, 3)") != std::string::npos;
  EXPECT_EQ(mentions, d.size());

  auto missing = kb;
  missing.slot(2, 3).reset();
  d = validate(missing);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NE(d[0].find("not total"), std::string::npos);
  EXPECT_NE(d[0].find("(2, 3)"), std::string::npos);

  auto unfrozen = kb;
  unfrozen.slot(1, 1)->layers[0].set_frozen(false);
  EXPECT_EQ(validate(unfrozen).size(), 1u);
}

TEST(KnowledgeBase, SaveLoadRoundTrip) {
  auto h = small_head();
  std::vector<ArchSpec> zoo = {make_plain_arch("a", {4, 6}, 1, h, 3, 8), make_residual_arch("b", {5, 6}, 1, h, 3, 8)};
  auto seeds = tiny_seeds(zoo);
  auto kb = tiny_kb(seeds, zoo);
  auto dir = temp_dir("kb_roundtrip");
  save_knowledge_base(kb, dir.string());
  auto back = load_knowledge_base(dir.string());
  EXPECT_EQ(back.n, kb.n);
  EXPECT_EQ(back.c, kb.c);
  EXPECT_EQ(back.head.widths, kb.head.widths);
  EXPECT_EQ(back.arch_names, kb.arch_names);
  EXPECT_EQ(back.schedule, kb.schedule);
  for (int j = 1; j <= kb.c; ++j) {
    for (int i = 1; i <= kb.n; ++i) {
      const auto &a = kb.at(j, i), &b = back.at(j, i);
      EXPECT_EQ(a.specs(), b.specs());
      EXPECT_EQ(a.in_channels, b.in_channels);
      EXPECT_EQ(a.out_channels, b.out_channels);
      EXPECT_EQ(a.in_resolution, b.in_resolution);
      auto pa = a.export_params(), pb = b.export_params();
      ASSERT_EQ(pa.size(), pb.size());
      for (size_t k = 0; k < pa.size(); ++k) {
        EXPECT_EQ(pa[k].name, pb[k].name);
        EXPECT_TRUE(pa[k].tensor.bit_equal(pb[k].tensor));
      }
    }
  }
}

TEST(KnowledgeBase, TruncatedWeightFileAndVersionRejected) {
  auto zoo = tiny_zoo();
  auto seeds = tiny_seeds(zoo);
  auto kb = tiny_kb(seeds, zoo);
  auto dir = temp_dir("kb_faults");
  save_knowledge_base(kb, dir.string());
  const auto weights = dir / module_file_name(2, 1);
  const auto size = std::filesystem::file_size(weights);
  std::filesystem::resize_file(weights, size - 3);
  try {
    load_knowledge_base(dir.string());
    FAIL() << "truncated file accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(module_file_name(2, 1)), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  EXPECT_TRUE(validate(kb).empty());

  save_knowledge_base(kb, dir.string());
  std::ifstream in(dir / "manifest.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  text.replace(text.find("version = 1"), 11, "version = 2");
  std::ofstream(dir / "manifest.txt", std::ios::trunc) << text;
  try {
    load_knowledge_base(dir.string());
    FAIL() << "version 2 accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
}
