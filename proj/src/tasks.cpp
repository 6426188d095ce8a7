#include "hir/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "hir/io.hpp"
#include "hir/rng.hpp"

namespace hir {

namespace {

const std::vector<std::string>& sorting_pool() {
  // The first six entries keep the toy-vocabulary runs small while still
  // covering the canonical three-word example.
  static const std::vector<std::string> pool = {
      "oven",   "costume", "counterpart", "banana", "plum",   "flute",
      "orange", "violin",  "cherry",      "desk",   "apple",  "zebra",
      "quilt",  "mirror",  "garden",      "helmet", "island", "jacket",
      "kettle", "lemon"};
  return pool;
}

const std::vector<std::string>& fruit_pool() {
  static const std::vector<std::string> pool = {
      "blackberry", "nectarine", "plum",   "strawberry", "banana",
      "orange",     "apple",     "cherry", "peach",      "pear"};
  return pool;
}

const std::vector<std::string>& instrument_pool() {
  static const std::vector<std::string> pool = {"clarinet", "flute",  "violin",
                                                "trumpet",  "drum",   "guitar"};
  return pool;
}

const std::vector<std::string>& person_pool() {
  static const std::vector<std::string> pool = {"Alice", "Bob",  "Claire", "Dave",
                                                "Eve",   "Fred", "Gertrude"};
  return pool;
}

const std::vector<std::string>& ball_color_pool() {
  static const std::vector<std::string> pool = {"orange", "white",  "blue",
                                                "pink",   "red",    "purple",
                                                "yellow", "green",  "black", "brown"};
  return pool;
}

const std::vector<std::string>& book_color_pool() {
  static const std::vector<std::string> pool = {"red",    "blue",  "green", "gray",
                                                "purple", "yellow", "black"};
  return pool;
}

bool is_fruit(const std::string& item) {
  const auto& fruits = fruit_pool();
  return std::find(fruits.begin(), fruits.end(), item) != fruits.end();
}

std::string with_article(const std::string& noun) {
  static const std::string vowels = "aeiou";
  const bool an = !noun.empty() && vowels.find(noun[0]) != std::string::npos;
  return (an ? "an " : "a ") + noun;
}

char option_label(int index) { return static_cast<char>('A' + index); }

std::string number_word(int k) {
  switch (k) {
    case 3: return "three";
    case 5: return "five";
    case 7: return "seven";
    default: throw std::invalid_argument("unsupported object count " + std::to_string(k));
  }
}

std::vector<int> shuffled_indices(int n, Rng rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

std::vector<std::string> draw_distinct(const std::vector<std::string>& pool, int limit,
                                       int count, Rng& rng) {
  if (limit > static_cast<int>(pool.size())) limit = static_cast<int>(pool.size());
  if (count > limit) {
    throw std::invalid_argument("requested " + std::to_string(count) +
                                " distinct items from a pool of " + std::to_string(limit));
  }
  std::vector<int> idx(static_cast<std::size_t>(limit));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int j = static_cast<int>(rng.next_below(idx.size()));
    out.push_back(pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]);
    idx.erase(idx.begin() + j);
  }
  return out;
}

}  // namespace

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::WordSorting: return "word-sorting";
    case TaskKind::ObjectCounting: return "object-counting";
    case TaskKind::TrackingShuffledObjects: return "tracking-shuffled-objects";
    case TaskKind::LogicalDeduction: return "logical-deduction";
    case TaskKind::ExternalJson: return "external-json";
  }
  return "unknown";
}

std::optional<TaskKind> task_kind_from_name(const std::string& name) {
  for (TaskKind kind : {TaskKind::WordSorting, TaskKind::ObjectCounting,
                        TaskKind::TrackingShuffledObjects, TaskKind::LogicalDeduction,
                        TaskKind::ExternalJson}) {
    if (name == task_kind_name(kind)) return kind;
  }
  return std::nullopt;
}

TaskInstance word_sorting_instance(const std::vector<std::string>& words,
                                   long long instance_id) {
  if (words.empty()) throw std::invalid_argument("word sorting needs at least one word");
  std::string query = "Sort the following words alphabetically: List:";
  for (const auto& w : words) query += " " + w;
  query += ".";
  std::vector<std::string> sorted = words;
  std::sort(sorted.begin(), sorted.end());
  std::string gold;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0) gold += " ";
    gold += sorted[i];
  }
  TaskInstance inst;
  inst.query = std::move(query);
  inst.gold_answer = std::move(gold);
  inst.kind = TaskKind::WordSorting;
  inst.instance_id = instance_id;
  return inst;
}

TaskInstance object_counting_instance(const std::vector<std::string>& items,
                                      long long instance_id) {
  if (items.size() < 2) throw std::invalid_argument("object counting needs at least two items");
  std::string query = "I have ";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) query += i + 1 == items.size() ? ", and " : ", ";
    query += with_article(items[i]);
  }
  query += ". How many fruits do I have?";
  const long fruits = std::count_if(items.begin(), items.end(), is_fruit);
  TaskInstance inst;
  inst.query = std::move(query);
  inst.gold_answer = std::to_string(fruits);
  inst.kind = TaskKind::ObjectCounting;
  inst.instance_id = instance_id;
  return inst;
}

TaskInstance tracking_instance(const std::vector<std::string>& initial_colors,
                               const std::vector<std::pair<int, int>>& swaps,
                               long long instance_id) {
  const int k = static_cast<int>(initial_colors.size());
  if (k < 2 || k > static_cast<int>(person_pool().size())) {
    throw std::invalid_argument("tracking supports 2.." +
                                std::to_string(person_pool().size()) + " players");
  }
  const auto& people = person_pool();
  std::string query;
  for (int i = 0; i < k; ++i) {
    if (i > 0) query += ", ";
    query += people[static_cast<std::size_t>(i)] + " has the " +
             initial_colors[static_cast<std::size_t>(i)] + " ball";
  }
  query += ".";
  // holder[i] = index of the ball person i currently holds
  std::vector<int> holder(static_cast<std::size_t>(k));
  std::iota(holder.begin(), holder.end(), 0);
  for (std::size_t s = 0; s < swaps.size(); ++s) {
    const auto [a, b] = swaps[s];
    if (a < 0 || b < 0 || a >= k || b >= k || a == b) {
      throw std::invalid_argument("invalid swap pair");
    }
    std::swap(holder[static_cast<std::size_t>(a)], holder[static_cast<std::size_t>(b)]);
    query += s == 0 ? " " : " Then ";
    query += people[static_cast<std::size_t>(a)] + " and " +
             people[static_cast<std::size_t>(b)] + " swap.";
  }
  query += " At the end of the game, Alice has the Options:";
  TaskInstance inst;
  for (int i = 0; i < k; ++i) {
    std::string opt = "(";
    opt += option_label(i);
    opt += ") " + initial_colors[static_cast<std::size_t>(i)] + " ball";
    query += " " + opt;
    inst.options.push_back(std::move(opt));
  }
  inst.query = std::move(query);
  inst.gold_answer = inst.options[static_cast<std::size_t>(holder[0])];
  inst.kind = TaskKind::TrackingShuffledObjects;
  inst.k = k;
  inst.instance_id = instance_id;
  return inst;
}

TaskInstance logical_deduction_instance(const std::vector<std::string>& arrangement,
                                        std::uint64_t presentation_seed,
                                        long long instance_id) {
  const int k = static_cast<int>(arrangement.size());
  if (k < 2 || k > 7) throw std::invalid_argument("deduction supports 2..7 books");
  Rng rng = Rng(presentation_seed).fold(kStreamTaskGen);

  // Constraints: the adjacent pairs of the true order, presented shuffled and
  // randomly flipped between "left of" / "right of" phrasings.
  struct Constraint {
    int left, right;
  };
  std::vector<Constraint> constraints;
  for (int i = 0; i + 1 < k; ++i) constraints.push_back({i, i + 1});
  const auto constraint_order = shuffled_indices(k - 1, rng.fold(1));
  const auto intro_order = shuffled_indices(k, rng.fold(2));
  const auto option_order = shuffled_indices(k, rng.fold(3));
  Rng flip = rng.fold(4);

  std::string query = "On a shelf there are " + number_word(k) + " books:";
  for (int i = 0; i < k; ++i) {
    if (i > 0) query += i + 1 == k ? ", and" : ",";
    query += " " + with_article(arrangement[static_cast<std::size_t>(intro_order[static_cast<std::size_t>(i)])] + " book");
  }
  query += ".";
  for (int c = 0; c < k - 1; ++c) {
    const Constraint& cons = constraints[static_cast<std::size_t>(constraint_order[static_cast<std::size_t>(c)])];
    const std::string& a = arrangement[static_cast<std::size_t>(cons.left)];
    const std::string& b = arrangement[static_cast<std::size_t>(cons.right)];
    if (flip.next_below(2) == 0) {
      query += " The " + a + " book is to the left of the " + b + " book.";
    } else {
      query += " The " + b + " book is to the right of the " + a + " book.";
    }
  }
  query += " Which book is the leftmost? Options:";

  TaskInstance inst;
  int gold_index = -1;
  for (int i = 0; i < k; ++i) {
    const int obj = option_order[static_cast<std::size_t>(i)];
    std::string opt = "(";
    opt += option_label(i);
    opt += ") " + arrangement[static_cast<std::size_t>(obj)] + " book";
    query += " " + opt;
    if (obj == 0) gold_index = i;
    inst.options.push_back(std::move(opt));
  }

  // A chain of relative constraints pins the order, but verify by brute
  // force over all k! arrangements anyway.
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  int solutions = 0;
  do {
    std::vector<int> pos(static_cast<std::size_t>(k));
    for (int p = 0; p < k; ++p) pos[static_cast<std::size_t>(perm[static_cast<std::size_t>(p)])] = p;
    bool ok = true;
    for (const auto& cons : constraints) {
      if (pos[static_cast<std::size_t>(cons.left)] >= pos[static_cast<std::size_t>(cons.right)]) {
        ok = false;
        break;
      }
    }
    solutions += ok ? 1 : 0;
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (solutions != 1) throw std::logic_error("deduction constraints admit " +
                                             std::to_string(solutions) + " solutions");

  inst.query = std::move(query);
  inst.gold_answer = inst.options[static_cast<std::size_t>(gold_index)];
  inst.kind = TaskKind::LogicalDeduction;
  inst.k = k;
  inst.instance_id = instance_id;
  return inst;
}

TaskInstance generate_task(TaskKind kind, int size, std::uint64_t rng_seed,
                           const GenOptions& opts) {
  Rng rng = Rng(rng_seed).fold(kStreamTaskGen).fold(static_cast<std::uint64_t>(kind));
  switch (kind) {
    case TaskKind::WordSorting: {
      if (size < 2 || size > 8) {
        throw std::invalid_argument("word sorting size must be in [2, 8], got " +
                                    std::to_string(size));
      }
      return word_sorting_instance(draw_distinct(sorting_pool(), opts.word_pool, size, rng),
                                   static_cast<long long>(rng_seed));
    }
    case TaskKind::ObjectCounting: {
      if (size < 2 || size > 10) {
        throw std::invalid_argument("object counting size must be in [2, 10], got " +
                                    std::to_string(size));
      }
      std::vector<std::string> joint = fruit_pool();
      const auto& instruments = instrument_pool();
      joint.insert(joint.end(), instruments.begin(), instruments.end());
      return object_counting_instance(
          draw_distinct(joint, static_cast<int>(joint.size()), size, rng),
          static_cast<long long>(rng_seed));
    }
    case TaskKind::TrackingShuffledObjects: {
      if (size != 3 && size != 5 && size != 7) {
        throw std::invalid_argument("tracking size must be one of {3, 5, 7}, got " +
                                    std::to_string(size));
      }
      const auto colors = draw_distinct(ball_color_pool(), opts.color_pool, size, rng);
      std::vector<std::pair<int, int>> swaps;
      for (int s = 0; s < size; ++s) {
        const int a = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size)));
        int b = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - 1)));
        if (b >= a) ++b;
        swaps.emplace_back(a, b);
      }
      return tracking_instance(colors, swaps, static_cast<long long>(rng_seed));
    }
    case TaskKind::LogicalDeduction: {
      if (size != 3 && size != 5 && size != 7) {
        throw std::invalid_argument("deduction size must be one of {3, 5, 7}, got " +
                                    std::to_string(size));
      }
      auto arrangement = draw_distinct(book_color_pool(), opts.book_pool, size, rng);
      return logical_deduction_instance(arrangement, rng.next_u64(),
                                        static_cast<long long>(rng_seed));
    }
    case TaskKind::ExternalJson:
      throw std::invalid_argument("external-json tasks are loaded, not generated");
  }
  throw std::invalid_argument("unknown task kind");
}

TaskSet generate_taskset(TaskKind kind, int count, int size, std::uint64_t task_seed,
                         const GenOptions& opts, std::uint64_t split_seed,
                         double train_fraction) {
  if (count < 1) throw std::invalid_argument("taskset count must be positive");
  TaskSet set;
  set.split_seed = split_seed;
  set.train_fraction = train_fraction;
  std::unordered_set<std::string> seen;
  Rng seeder = Rng(task_seed).fold(kStreamTaskGen);
  const int max_attempts = 200 * count;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(set.instances.size()) < count;
       ++attempt) {
    TaskInstance inst = generate_task(kind, size, seeder.next_u64(), opts);
    if (!seen.insert(inst.query).second) continue;
    inst.instance_id = static_cast<long long>(set.instances.size());
    set.instances.push_back(std::move(inst));
  }
  if (static_cast<int>(set.instances.size()) < count) {
    throw std::runtime_error("could not generate " + std::to_string(count) +
                             " distinct instances; pool too small");
  }
  return set;
}

std::string normalize_answer(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // also trims leading whitespace
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out += ' ';
    in_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::optional<char> leading_option_label(const std::string& normalized) {
  if (normalized.size() < 3 || normalized[0] != '(' || normalized[2] != ')') return std::nullopt;
  const char c = normalized[1];
  if (c < 'a' || c > 'z') return std::nullopt;
  if (normalized.size() > 3 && normalized[3] != ' ') return std::nullopt;
  return c;
}

bool check_answer(const TaskInstance& task, const std::string& output) {
  const std::string out = normalize_answer(output);
  const std::string gold = normalize_answer(task.gold_answer);
  if (!task.options.empty()) {
    const auto out_label = leading_option_label(out);
    const auto gold_label = leading_option_label(gold);
    if (out_label && gold_label) return *out_label == *gold_label;
    return false;
  }
  return out == gold;
}

std::pair<std::vector<TaskInstance>, std::vector<TaskInstance>> split(const TaskSet& taskset) {
  const int n = static_cast<int>(taskset.instances.size());
  if (n < 5) throw std::invalid_argument("need at least 5 instances to split, got " +
                                         std::to_string(n));
  if (!(taskset.train_fraction > 0.0 && taskset.train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  }
  int n_train = static_cast<int>(std::llround(taskset.train_fraction * n));
  n_train = std::max(1, std::min(n - 1, n_train));
  auto order = shuffled_indices(n, Rng(taskset.split_seed).fold(kStreamSplit));
  std::vector<int> train_idx(order.begin(), order.begin() + n_train);
  std::vector<int> eval_idx(order.begin() + n_train, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  std::pair<std::vector<TaskInstance>, std::vector<TaskInstance>> result;
  for (int i : train_idx) result.first.push_back(taskset.instances[static_cast<std::size_t>(i)]);
  for (int i : eval_idx) result.second.push_back(taskset.instances[static_cast<std::size_t>(i)]);
  return result;
}

namespace {

// Line number of the i-th top-level array element, for error reporting.
std::vector<int> element_lines(const std::string& text) {
  std::vector<int> lines;
  int depth = 0;
  int line = 1;
  bool in_string = false;
  bool escaped = false;
  bool expecting_value = false;
  for (char c : text) {
    if (c == '\n') ++line;
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '[':
        if (depth == 0) expecting_value = true;
        ++depth;
        continue;
      case ']':
      case '}':
        --depth;
        continue;
      case '{': ++depth; break;
      case ',':
        if (depth == 1) expecting_value = true;
        continue;
      default:
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        break;
    }
    if (depth >= 1 && expecting_value) {
      lines.push_back(line);
      expecting_value = false;
    }
  }
  return lines;
}

}  // namespace

TaskSet load_bigbench_json(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  if (!doc.is_array()) throw std::runtime_error(path + ": expected a top-level array");
  if (doc.empty()) throw std::runtime_error(path + ": task list is empty");
  const auto lines = element_lines(text);

  TaskSet set;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where =
        "record " + std::to_string(i) +
        (i < lines.size() ? " (line " + std::to_string(lines[i]) + ")" : "");
    const auto& rec = doc[i];
    if (!rec.is_object()) throw std::runtime_error(path + ": " + where + ": expected an object");
    if (!rec.contains("query") || !rec["query"].is_string() ||
        rec["query"].get<std::string>().empty()) {
      throw std::runtime_error(path + ": " + where + ": missing or empty field 'query'");
    }
    if (!rec.contains("gold_answer") || !rec["gold_answer"].is_string() ||
        rec["gold_answer"].get<std::string>().empty()) {
      throw std::runtime_error(path + ": " + where + ": missing or empty field 'gold_answer'");
    }
    TaskInstance inst;
    inst.query = rec["query"].get<std::string>();
    inst.gold_answer = rec["gold_answer"].get<std::string>();
    if (rec.contains("options")) {
      if (!rec["options"].is_array()) {
        throw std::runtime_error(path + ": " + where + ": 'options' must be an array");
      }
      for (const auto& opt : rec["options"]) {
        if (!opt.is_string() || opt.get<std::string>().empty()) {
          throw std::runtime_error(path + ": " + where + ": options must be non-empty strings");
        }
        inst.options.push_back(opt.get<std::string>());
      }
      if (!inst.options.empty() &&
          std::find(inst.options.begin(), inst.options.end(), inst.gold_answer) ==
              inst.options.end()) {
        throw std::runtime_error(path + ": " + where + ": gold_answer is not one of options");
      }
    }
    inst.kind = TaskKind::ExternalJson;
    inst.instance_id = static_cast<long long>(i);
    set.instances.push_back(std::move(inst));
  }
  return set;
}

void save_bigbench_json(const TaskSet& taskset, const std::string& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& inst : taskset.instances) {
    nlohmann::json rec;
    rec["query"] = inst.query;
    rec["gold_answer"] = inst.gold_answer;
    if (!inst.options.empty()) rec["options"] = inst.options;
    doc.push_back(std::move(rec));
  }
  atomic_write_file(path, doc.dump(2) + "\n");
}

std::vector<std::string> answer_alphabet(TaskKind kind) {
  if (kind == TaskKind::ObjectCounting) {
    std::vector<std::string> digits;
    for (int i = 0; i <= 10; ++i) digits.push_back(std::to_string(i));
    return digits;
  }
  return {};
}

std::vector<EvalView> make_eval_views(const std::vector<TaskInstance>& instances) {
  std::vector<EvalView> views;
  views.reserve(instances.size());
  for (const auto& inst : instances) views.emplace_back(inst);
  return views;
}

}  // namespace hir
