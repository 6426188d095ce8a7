#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "hir/io.hpp"
#include "hir/tasks.hpp"

using namespace hir;

TEST_CASE("word sorting renders the canonical three-word example") {
  const auto inst = word_sorting_instance({"oven", "costume", "counterpart"});
  CHECK(inst.query == "Sort the following words alphabetically: List: oven costume counterpart.");
  CHECK(inst.gold_answer == "costume counterpart oven");
  CHECK(inst.options.empty());
}

TEST_CASE("word sorting single word is the identity") {
  const auto inst = word_sorting_instance({"zebra"});
  CHECK(inst.gold_answer == "zebra");
}

TEST_CASE("object counting counts fruits in the canonical item list") {
  const auto inst = object_counting_instance({"blackberry", "clarinet", "nectarine", "plum",
                                              "strawberry", "banana", "flute", "orange",
                                              "violin"});
  CHECK(inst.gold_answer == "6");
  CHECK(inst.query ==
        "I have a blackberry, a clarinet, a nectarine, a plum, a strawberry, a banana, "
        "a flute, an orange, and a violin. How many fruits do I have?");
}

TEST_CASE("tracking simulates swaps and renders options in initial order") {
  // Alice:orange, Bob:white, Claire:blue; swaps A-B, B-C, A-B.
  const auto inst = tracking_instance({"orange", "white", "blue"}, {{0, 1}, {1, 2}, {0, 1}});
  REQUIRE(inst.options.size() == 3);
  CHECK(inst.options[0] == "(A) orange ball");
  CHECK(inst.options[1] == "(B) white ball");
  CHECK(inst.options[2] == "(C) blue ball");
  CHECK(inst.gold_answer == "(C) blue ball");
  CHECK(inst.query.find("At the end of the game, Alice has the Options:") != std::string::npos);
}

TEST_CASE("logical deduction gold is the leftmost book") {
  const auto inst = logical_deduction_instance({"red", "blue", "green"}, 7);
  REQUIRE(inst.options.size() == 3);
  const std::string gold = inst.gold_answer;
  CHECK(gold.find("red book") != std::string::npos);
  CHECK(check_answer(inst, gold));
}

TEST_CASE("generate_task rejects out-of-bounds sizes") {
  CHECK_THROWS_AS(generate_task(TaskKind::WordSorting, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::WordSorting, 9, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::ObjectCounting, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::TrackingShuffledObjects, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::LogicalDeduction, 6, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::ExternalJson, 3, 0), std::invalid_argument);
}

TEST_CASE("generate_task is deterministic in the seed") {
  for (auto kind : {TaskKind::WordSorting, TaskKind::ObjectCounting,
                    TaskKind::TrackingShuffledObjects, TaskKind::LogicalDeduction}) {
    const int size = kind == TaskKind::WordSorting || kind == TaskKind::ObjectCounting ? 4 : 3;
    const auto a = generate_task(kind, size, 1234);
    const auto b = generate_task(kind, size, 1234);
    CHECK(a.query == b.query);
    CHECK(a.gold_answer == b.gold_answer);
    CHECK(a.options == b.options);
  }
}

TEST_CASE("generator and oracle agree on fuzzed instances") {
  int checked = 0;
  for (auto kind : {TaskKind::WordSorting, TaskKind::ObjectCounting,
                    TaskKind::TrackingShuffledObjects, TaskKind::LogicalDeduction}) {
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      int size = 0;
      switch (kind) {
        case TaskKind::WordSorting: size = 2 + static_cast<int>(seed % 7); break;
        case TaskKind::ObjectCounting: size = 2 + static_cast<int>(seed % 9); break;
        default: size = seed % 3 == 0 ? 3 : (seed % 3 == 1 ? 5 : 7); break;
      }
      const auto inst = generate_task(kind, size, seed);
      REQUIRE(!inst.query.empty());
      REQUIRE(!inst.gold_answer.empty());
      REQUIRE(check_answer(inst, inst.gold_answer));
      ++checked;
    }
  }
  CHECK(checked == 40000);
}

TEST_CASE("multiple-choice tasks accept exactly one option") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    for (auto kind : {TaskKind::TrackingShuffledObjects, TaskKind::LogicalDeduction}) {
      const auto inst = generate_task(kind, 3, seed);
      int passing = 0;
      for (const auto& opt : inst.options) passing += check_answer(inst, opt) ? 1 : 0;
      REQUIRE(passing == 1);
      REQUIRE(std::find(inst.options.begin(), inst.options.end(), inst.gold_answer) !=
              inst.options.end());
    }
  }
}

TEST_CASE("check_answer normalizes whitespace and case") {
  const auto mc = tracking_instance({"orange", "white", "blue"}, {{0, 1}});
  CHECK(mc.gold_answer == "(B) white ball");  // Alice got Bob's white ball
  CHECK(check_answer(mc, "(B)"));
  CHECK(check_answer(mc, " (b)  "));
  CHECK(check_answer(mc, "(b) white ball"));
  CHECK(check_answer(mc, "(B) WHITE   BALL"));
  CHECK_FALSE(check_answer(mc, "(a)"));
  CHECK_FALSE(check_answer(mc, "white ball"));

  const auto gen = object_counting_instance({"banana", "clarinet", "plum"});
  CHECK(gen.gold_answer == "2");
  CHECK(check_answer(gen, " 2 "));
  CHECK_FALSE(check_answer(gen, "7"));
}

TEST_CASE("split produces deterministic disjoint partitions") {
  TaskSet set = generate_taskset(TaskKind::WordSorting, 100, 3, 42, {}, 7, 0.8);
  auto [train, eval] = split(set);
  CHECK(train.size() == 80);
  CHECK(eval.size() == 20);

  auto [train2, eval2] = split(set);
  REQUIRE(train2.size() == train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].instance_id == train2[i].instance_id);
  }

  std::set<long long> ids;
  for (const auto& t : train) ids.insert(t.instance_id);
  for (const auto& e : eval) {
    CHECK(ids.find(e.instance_id) == ids.end());
    ids.insert(e.instance_id);
  }
  CHECK(ids.size() == 100);

  set.split_seed = 8;
  auto [train3, eval3] = split(set);
  bool same = train3.size() == train.size();
  if (same) {
    same = std::equal(train3.begin(), train3.end(), train.begin(),
                      [](const TaskInstance& a, const TaskInstance& b) {
                        return a.instance_id == b.instance_id;
                      });
  }
  CHECK_FALSE(same);
}

TEST_CASE("split rounds and rejects tiny sets") {
  TaskSet five = generate_taskset(TaskKind::WordSorting, 5, 3, 1);
  auto [train, eval] = split(five);
  CHECK(train.size() == 4);
  CHECK(eval.size() == 1);

  TaskSet four = five;
  four.instances.resize(4);
  CHECK_THROWS_AS(split(four), std::invalid_argument);
}

TEST_CASE("bigbench json round trip and validation") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "hir_tasks_test";
  fs::create_directories(dir);

  TaskSet set = generate_taskset(TaskKind::TrackingShuffledObjects, 10, 3, 11);
  const auto path = (dir / "tasks.json").string();
  save_bigbench_json(set, path);
  const TaskSet loaded = load_bigbench_json(path);
  REQUIRE(loaded.instances.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(loaded.instances[i].query == set.instances[i].query);
    CHECK(loaded.instances[i].gold_answer == set.instances[i].gold_answer);
    CHECK(loaded.instances[i].options == set.instances[i].options);
    CHECK(loaded.instances[i].kind == TaskKind::ExternalJson);
  }

  const auto bad = (dir / "bad.json").string();
  atomic_write_file(bad, R"([
  {"query": "fine", "gold_answer": "yes"},
  {"query": "broken"}
])");
  try {
    load_bigbench_json(bad);
    FAIL("expected schema error");
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    CHECK(what.find("record 1") != std::string::npos);
    CHECK(what.find("gold_answer") != std::string::npos);
    CHECK(what.find("line 3") != std::string::npos);
  }

  CHECK_THROWS_AS(load_bigbench_json((dir / "missing.json").string()), std::runtime_error);

  const auto empty = (dir / "empty.json").string();
  atomic_write_file(empty, "[]");
  CHECK_THROWS_AS(load_bigbench_json(empty), std::runtime_error);
}

TEST_CASE("date understanding record loads with three options") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "hir_tasks_test";
  fs::create_directories(dir);
  const auto path = (dir / "date.json").string();
  atomic_write_file(path, R"([
  {
    "query": "Q: Today is Christmas Eve of 1937. What is the date 10 days ago? Options: (A) 12/14/2026 (B) 12/14/2007 (C) 12/14/1937",
    "gold_answer": "(C) 12/14/1937",
    "options": ["(A) 12/14/2026", "(B) 12/14/2007", "(C) 12/14/1937"]
  }
])");
  const TaskSet set = load_bigbench_json(path);
  REQUIRE(set.instances.size() == 1);
  const auto& inst = set.instances[0];
  CHECK(inst.options.size() == 3);
  CHECK(leading_option_label(normalize_answer(inst.gold_answer)) == 'c');
  CHECK(check_answer(inst, "(C)"));
  CHECK_FALSE(check_answer(inst, "(B)"));
}

TEST_CASE("eval views expose queries and checkers but not answers") {
  TaskSet set = generate_taskset(TaskKind::WordSorting, 6, 3, 3);
  const auto views = make_eval_views(set.instances);
  REQUIRE(views.size() == 6);
  CHECK(views[0].query() == set.instances[0].query);
  CHECK(views[0].check(set.instances[0].gold_answer));
  CHECK_FALSE(views[0].check("definitely wrong"));
}
