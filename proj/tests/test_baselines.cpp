#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hir/baselines.hpp"
#include "hir/trainer.hpp"

using namespace hir;

namespace {

HirConfig sorting_config() {
  HirConfig c;
  c.task.kind = TaskKind::WordSorting;
  c.task.count = 20;
  c.task.size = 3;
  c.task.gen.word_pool = 6;
  c.iterations = 1;
  c.train_epochs = 2;
  c.online_samples_per_iteration = 6;
  c.batch_size = 4;
  c.max_new_tokens = 4;
  c.model.num_layers = 1;
  c.model.model_dim = 16;
  c.model.num_heads = 2;
  c.model.max_seq_len = 48;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("the filter keeps exactly the correct episodes in order") {
  const auto config = sorting_config();
  const auto task = prepare_task(config);
  ReplayDataset replay;
  std::vector<Episode> eps;
  for (int i = 0; i < 8; ++i) {
    Episode ep;
    ep.train_index = i % static_cast<int>(task.train.size());
    const auto& inst = task.train[static_cast<std::size_t>(ep.train_index)];
    const bool correct = i < 3;
    ep.output_ids = task.vocab.encode(correct ? inst.gold_answer : "plum plum plum");
    ep.output_text = task.vocab.decode(ep.output_ids);
    ep.answer_correct = check_answer(inst, ep.output_text);
    ep.instance_id = inst.instance_id;
    eps.push_back(std::move(ep));
  }
  replay.add(std::move(eps));

  const auto kept = farl_filter(replay);
  CHECK(kept.size() == 3);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& inst = task.train[static_cast<std::size_t>(kept[i].train_index)];
    CHECK(check_answer(inst, kept[i].output_text));  // re-check oracle
    CHECK(kept[i].train_index == static_cast<int>(i));  // order preserved
  }

  ReplayDataset empty;
  CHECK(farl_filter(empty).empty());
}

TEST_CASE("an all-wrong replay leaves the imitation baseline untrained") {
  // untrained word sorting has essentially no chance of an exact hit
  const auto config = sorting_config();
  const auto task = prepare_task(config);
  std::string warnings;
  const auto result = run_farl<double>(config, task, &warnings);
  ModelConfig mc = config.model;
  mc.vocab_size = task.vocab.size();
  const auto fresh = ModelState<double>::init(mc, config.seed);
  CHECK(result.model.params == fresh.params);
  CHECK(result.model.step_count == 0);
  CHECK(warnings.find("no correct episodes") != std::string::npos);
}

TEST_CASE("zero-epoch fine-tuning leaves the model unchanged") {
  auto config = sorting_config();
  config.train_epochs = 0;
  const auto task = prepare_task(config);
  const auto result = run_sft<double>(config, task);
  ModelConfig mc = config.model;
  mc.vocab_size = task.vocab.size();
  CHECK(result.model.params == ModelState<double>::init(mc, config.seed).params);
}

TEST_CASE("fine-tuning memorizes a ten-instance training set") {
  auto config = sorting_config();
  config.task.count = 13;  // 10 train / 3 eval at the default split
  config.task.train_fraction = 0.77;
  config.iterations = 1;
  config.train_epochs = 200;
  config.batch_size = 10;
  config.lr = 3e-3;
  config.model.num_layers = 2;
  config.model.model_dim = 32;
  const auto task = prepare_task(config);
  REQUIRE(task.train.size() == 10);

  const auto result = run_sft<double>(config, task);
  const auto train_views = make_eval_views(task.train);
  const double train_acc =
      evaluate(result.model, train_views, task.vocab, config.max_new_tokens);
  CHECK(train_acc == 1.0);
}

TEST_CASE("evaluation sits at chance on option tasks for an untrained model") {
  // A fresh model with a zeroed output head scores every option equally and
  // the tie-break picks the first option; gold positions are uniform by
  // construction, so accuracy concentrates at 1/3.
  TaskSet set = generate_taskset(TaskKind::LogicalDeduction, 3000, 3, 77);
  const auto views = make_eval_views(set.instances);
  Vocab vocab = Vocab::build_for_run(set.instances, {}, TaskKind::LogicalDeduction,
                                     PromptTemplates{});
  ModelConfig mc;
  mc.num_layers = 1;
  mc.model_dim = 16;
  mc.num_heads = 2;
  mc.max_seq_len = 96;
  mc.vocab_size = vocab.size();
  auto model = ModelState<double>::init(mc, 9);
  model.tensor("w_head").setZero();
  model.tensor("b_head").setZero();

  const double acc = evaluate(model, views, vocab, 4);
  const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 3000.0);
  CHECK(std::abs(acc - 1.0 / 3.0) <= 3.0 * sigma);

  // a randomly initialized model should also hover near chance
  const auto random_model = ModelState<double>::init(mc, 10);
  const double acc2 = evaluate(random_model, views, vocab, 4);
  CHECK(acc2 > 0.25);
  CHECK(acc2 < 0.42);
}

TEST_CASE("evaluation is deterministic and never touches feedback") {
  const auto config = sorting_config();
  const auto task = prepare_task(config);
  ModelConfig mc = config.model;
  mc.vocab_size = task.vocab.size();
  const auto model = ModelState<double>::init(mc, 4);

  const auto before = feedback_invocation_count();
  const double a = evaluate(model, task.eval_views, task.vocab, config.max_new_tokens);
  const double b = evaluate(model, task.eval_views, task.vocab, config.max_new_tokens);
  CHECK(a == b);
  CHECK(feedback_invocation_count() == before);
}

TEST_CASE("a model that memorized the eval answers scores one") {
  // fine-tune directly on the instances used for evaluation
  auto config = sorting_config();
  config.task.count = 8;
  config.iterations = 1;
  config.train_epochs = 150;
  config.batch_size = 6;
  config.lr = 3e-3;
  config.model.num_layers = 2;
  config.model.model_dim = 32;
  const auto task = prepare_task(config);
  const auto result = run_sft<double>(config, task);
  const auto views = make_eval_views(task.train);
  CHECK(evaluate(result.model, views, task.vocab, config.max_new_tokens) == 1.0);
}
