#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hir/infer.hpp"
#include "hir/losses.hpp"
#include "test_util.hpp"

using namespace hir;
using namespace hir_test;

namespace {

SupervisedExample make_example(int vocab, std::uint64_t seed, int ctx_len = 6,
                               int target_len = 3) {
  SupervisedExample ex;
  ConditioningContext ctx;
  ctx.instruction_ids = {4};
  ctx.query_ids = random_ids(ctx_len, vocab, seed);
  ex.tokens = render_context(ctx);
  ex.target_begin = static_cast<int>(ex.tokens.size());
  const auto target = random_ids(target_len, vocab, seed + 1000);
  ex.tokens.insert(ex.tokens.end(), target.begin(), target.end());
  return ex;
}

ContrastivePair make_pair(int vocab, std::uint64_t seed, int out_len = 3) {
  ContrastivePair pair;
  ConditioningContext ctx;
  ctx.instruction_ids = {seed % 2 == 0 ? 4 : 5};
  ctx.query_ids = random_ids(5, vocab, seed);
  pair.ctx = render_context(ctx);
  pair.output = random_ids(out_len, vocab, seed + 2000);
  return pair;
}

}  // namespace

TEST_CASE("uniform model cross entropy is ln(vocab) and smoothing-invariant") {
  const int V = 20;
  auto model = ModelState<double>::init(tiny_config(V), 1);
  zero_output_head(model);
  TrainBatch batch;
  batch.supervised = {make_example(V, 1), make_example(V, 2)};

  for (double eps : {0.0, 0.2, 0.7}) {
    LossWeights w;
    w.label_smoothing = eps;
    const auto b = compute_loss<double>(model, batch, w, nullptr);
    CHECK(std::abs(b.supervised - std::log(V)) < 1e-9);
  }
}

TEST_CASE("uniform model entropy term is -ln(vocab) per position") {
  const int V = 20;
  auto model = ModelState<double>::init(tiny_config(V), 2);
  zero_output_head(model);
  TrainBatch batch;
  batch.supervised = {make_example(V, 3)};
  LossWeights w;
  const auto b = compute_loss<double>(model, batch, w, nullptr);
  CHECK(std::abs(b.entropy_term + std::log(V)) < 1e-9);
}

TEST_CASE("entropy term stays within its bounds on random models") {
  const int V = 17;
  const auto model = ModelState<double>::init(tiny_config(V), 3);
  TrainBatch batch;
  batch.supervised = {make_example(V, 4), make_example(V, 5, 4, 5)};
  LossWeights w;
  const auto b = compute_loss<double>(model, batch, w, nullptr);
  CHECK(b.entropy_term <= 0.0);
  CHECK(b.entropy_term >= -std::log(V));
}

TEST_CASE("a near-deterministic model has near-zero loss and entropy") {
  const int V = 14;
  auto model = ModelState<double>::init(tiny_config(V), 4);
  TrainBatch batch;
  SupervisedExample ex = make_example(V, 6);
  // every target position predicts the same token; rig its logit sky-high
  for (int t = ex.target_begin; t < static_cast<int>(ex.tokens.size()); ++t) {
    ex.tokens[static_cast<std::size_t>(t)] = 7;
  }
  batch.supervised = {ex};
  model.tensor("w_head").setZero();
  auto bias = model.tensor("b_head");
  bias.setZero();
  bias(0, 7) = 1e4;

  LossWeights w;
  w.label_smoothing = 0.0;
  const auto b = compute_loss<double>(model, batch, w, nullptr);
  CHECK(b.supervised >= 0.0);
  CHECK(b.supervised < 1e-8);
  CHECK(b.entropy_term <= 0.0);
  CHECK(b.entropy_term > -1e-8);
}

TEST_CASE("without smoothing the supervised loss is the negative mean log likelihood") {
  const int V = 19;
  const auto model = ModelState<double>::init(tiny_config(V), 5);
  TrainBatch batch;
  batch.supervised = {make_example(V, 7, 5, 2), make_example(V, 8, 3, 4)};
  LossWeights w;
  w.label_smoothing = 0.0;
  const auto b = compute_loss<double>(model, batch, w, nullptr);

  double ll = 0.0;
  int positions = 0;
  for (const auto& ex : batch.supervised) {
    ConditioningContext ctx;  // reconstruct: tokens[1] is the instruction token
    ctx.instruction_ids = {ex.tokens[1]};
    ctx.query_ids.assign(ex.tokens.begin() + 3, ex.tokens.begin() + ex.target_begin - 1);
    const std::vector<int> target(ex.tokens.begin() + ex.target_begin, ex.tokens.end());
    ll += sequence_log_prob(model, ctx, target);
    positions += static_cast<int>(target.size());
  }
  CHECK(std::abs(b.supervised + ll / positions) < 1e-10);
}

TEST_CASE("contrastive loss is zero for one pair and 2 ln 2 for identical pairs") {
  const int V = 16;
  const auto model = ModelState<double>::init(tiny_config(V), 6);
  LossWeights w;

  TrainBatch one;
  one.supervised = {make_example(V, 9)};
  one.contrastive = {make_pair(V, 10)};
  CHECK(compute_loss<double>(model, one, w, nullptr).contrastive == 0.0);

  TrainBatch two;
  two.supervised = {make_example(V, 9)};
  ContrastivePair p1 = make_pair(V, 11);
  ContrastivePair p2 = p1;
  p2.output = random_ids(3, V, 4242);  // same conditioning, different outputs
  two.contrastive = {p1, p2};
  const auto b = compute_loss<double>(model, two, w, nullptr);
  CHECK(std::abs(b.contrastive - 2.0 * std::log(2.0)) < 1e-12);
}

TEST_CASE("contrastive loss matches the scalar brute-force oracle") {
  const int V = 16;
  const auto model = ModelState<double>::init(tiny_config(V), 7);
  for (int n = 1; n <= 4; ++n) {
    TrainBatch batch;
    batch.supervised = {make_example(V, 12)};
    for (int i = 0; i < n; ++i) {
      batch.contrastive.push_back(make_pair(V, 100 + static_cast<std::uint64_t>(10 * n + i),
                                            2 + (i % 2)));
    }
    LossWeights w;
    const auto b = compute_loss<double>(model, batch, w, nullptr);

    // independent scalar route: stepwise next-token products, plain loops
    std::vector<std::vector<double>> P(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        const auto& ctx_ids = batch.contrastive[static_cast<std::size_t>(k)].ctx;
        const auto& out = batch.contrastive[static_cast<std::size_t>(i)].output;
        ConditioningContext ctx;
        ctx.instruction_ids = {ctx_ids[1]};
        ctx.query_ids.assign(ctx_ids.begin() + 3, ctx_ids.end() - 1);
        double lp = 0.0;
        for (std::size_t t = 0; t < out.size(); ++t) {
          const auto dist = next_token_distribution(model, ctx);
          lp += std::log(dist(out[t]));
          ctx.prefix_ids.push_back(out[t]);
        }
        P[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = lp;
      }
    }
    double oracle = 0.0;
    for (int i = 0; i < n; ++i) {
      double m = P[static_cast<std::size_t>(i)][0];
      for (int k = 1; k < n; ++k) m = std::max(m, P[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
      double sum = 0.0;
      for (int k = 0; k < n; ++k) sum += std::exp(P[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] - m);
      oracle += m + std::log(sum) - P[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    }
    CHECK(std::abs(b.contrastive - oracle) < 1e-10);
    CHECK(b.contrastive >= 0.0);
  }
}

TEST_CASE("total is exactly the weighted sum of logged components") {
  const int V = 15;
  const auto model = ModelState<double>::init(tiny_config(V), 8);
  TrainBatch batch;
  batch.supervised = {make_example(V, 13), make_example(V, 14)};
  batch.contrastive = {make_pair(V, 15), make_pair(V, 16)};

  LossWeights w;
  const auto b = compute_loss<double>(model, batch, w, nullptr);
  CHECK(b.total == b.supervised + w.alpha * b.contrastive + w.beta * b.entropy_term);

  LossWeights off;
  off.alpha = 0.0;
  off.beta = 0.0;
  const auto b0 = compute_loss<double>(model, batch, off, nullptr);
  CHECK(b0.total == b0.supervised);
  CHECK(b0.contrastive == 0.0);
  CHECK(b0.entropy_term == 0.0);
}

TEST_CASE("loss gradients match finite differences on sampled coordinates") {
  const int V = 12;
  const auto model = ModelState<double>::init(tiny_config(V, 8, 1, 2, 32), 9);
  TrainBatch batch;
  batch.supervised = {make_example(V, 17, 4, 2), make_example(V, 18, 3, 3)};
  batch.contrastive = {make_pair(V, 19, 2), make_pair(V, 20, 2)};
  LossWeights w;

  Rng rng = Rng(31).fold(kStreamProbe);
  const double h = 1e-4;
  for (LossTerm term : {LossTerm::Supervised, LossTerm::Contrastive, LossTerm::Entropy,
                        LossTerm::Total}) {
    VectorX<double> grad;
    compute_loss<double>(model, batch, w, &grad, term, true);
    for (int probe = 0; probe < 20; ++probe) {
      const auto idx =
          static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(model.params.size())));
      auto perturbed = model;
      perturbed.params(idx) += h;
      const double up = loss_term_value<double>(perturbed, batch, w, term);
      perturbed.params(idx) -= 2 * h;
      const double down = loss_term_value<double>(perturbed, batch, w, term);
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(grad(idx))});
      CHECK(std::abs(fd - grad(idx)) / denom < 1e-4);
    }
  }
}

TEST_CASE("empty supervised batch is rejected") {
  const auto model = ModelState<double>::init(tiny_config(10), 10);
  TrainBatch batch;
  LossWeights w;
  CHECK_THROWS_AS(compute_loss<double>(model, batch, w, nullptr), std::invalid_argument);
}
