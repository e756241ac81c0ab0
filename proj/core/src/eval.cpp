#include "affectgen/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "affectgen/error.hpp"
#include "affectgen/random.hpp"

namespace affectgen {
namespace {

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

bool all_digits(const std::string& w) {
  return std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

struct Outcome {
  bool ok = false;
  double ppl = 0.0;
  IntensityScore score;
  bool topic_hit = false;
  GenerationRecord record;
};

struct Task {
  const CellSpec* cell;
  std::size_t generation;
};

Outcome run_generation(const LanguageModel& model, const Lexicon& lexicon, const CellSpec& cell, std::size_t g,
                       bool keep_record) {
  Outcome out;
  try {
    ControlConfig config = cell.config;
    config.sampler.seed = generation_seed(cell.master_seed, cell.prompt_id, g);
    GenerationRecord rec = generate(model, cell.prompt, cell.length, config);
    out.ppl = continuation_perplexity(model, rec.prompt_tokens, rec.tokens);
    if (cell.score_emotion) out.score = intensity_score(rec.text, *cell.score_emotion, lexicon);
    if (cell.score_topic) out.topic_hit = mentions_topic(rec.text, *cell.score_topic);
    if (keep_record) out.record = std::move(rec);
    out.ok = true;
  } catch (const Error&) {
    out.ok = false;
  }
  return out;
}

std::vector<Outcome> run_tasks(const LanguageModel& model, const Lexicon& lexicon, const std::vector<Task>& tasks,
                               const EvalOptions& options, bool keep_records) {
  std::vector<Outcome> outcomes(tasks.size());
  std::size_t threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
  threads = std::min(threads, std::max<std::size_t>(1, tasks.size()));

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        outcomes[i] = run_generation(model, lexicon, *tasks[i].cell, tasks[i].generation, keep_records);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
      const std::size_t d = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(d, tasks.size());
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return outcomes;
}

CellResult aggregate(const CellSpec& cell, std::span<Outcome> outcomes) {
  CellResult r;
  r.emotion = cell.score_emotion;
  r.knob = cell.config.knob;
  r.prompt_id = cell.prompt_id;
  std::vector<double> ppls;
  double intensity_sum = 0.0;
  std::size_t hits = 0;
  for (const Outcome& o : outcomes) {
    if (!o.ok) continue;
    ppls.push_back(o.ppl);
    if (o.score.matched > 0) {
      intensity_sum += o.score.score;
      ++r.scored;
    }
    if (o.topic_hit) ++hits;
  }
  r.n = ppls.size();
  r.flagged = r.n == 0;
  if (r.n == 0) return r;
  double sum = 0.0;
  for (double p : ppls) sum += p;
  r.mean_ppl = sum / static_cast<double>(r.n);
  std::sort(ppls.begin(), ppls.end());
  r.median_ppl = r.n % 2 == 1 ? ppls[r.n / 2] : 0.5 * (ppls[r.n / 2 - 1] + ppls[r.n / 2]);
  r.mean_intensity = r.scored > 0 ? intensity_sum / static_cast<double>(r.scored) : 0.0;
  if (cell.score_topic) r.topic_hit_rate = static_cast<double>(hits) / static_cast<double>(r.n);
  return r;
}

}  // namespace

std::vector<std::string> scoring_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty() && !all_digits(current)) words.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) != 0 || is_ascii_punct(c)) {
      flush();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

IntensityScore intensity_score(std::string_view text, Emotion emotion, const Lexicon& lexicon) {
  IntensityScore s;
  double sum = 0.0;
  for (const auto& w : scoring_words(text)) {
    if (auto v = lexicon.intensity(w, emotion)) {
      sum += *v;
      ++s.matched;
    }
  }
  if (s.matched > 0) s.score = sum / static_cast<double>(s.matched);
  return s;
}

bool mentions_topic(std::string_view text, const TopicBag& topic) {
  const std::set<std::string> bag(topic.source_words.begin(), topic.source_words.end());
  for (const auto& w : scoring_words(text)) {
    if (bag.contains(w)) return true;
  }
  return false;
}

double topic_hit_rate(std::span<const GenerationRecord> records, const TopicBag& topic) {
  if (records.empty()) throw Error("topic_hit_rate needs at least one record");
  const auto hits = std::count_if(records.begin(), records.end(),
                                  [&](const GenerationRecord& r) { return mentions_topic(r.text, topic); });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

std::uint64_t generation_seed(std::uint64_t master_seed, std::size_t prompt_id, std::size_t generation) {
  return derive_seed(derive_seed(master_seed, prompt_id), generation);
}

CellResult evaluate_cell(const LanguageModel& model, const Lexicon& lexicon, const CellSpec& cell,
                         const EvalOptions& options, std::vector<GenerationRecord>* records) {
  if (cell.generations < 1) throw ConfigError("generations", "must be at least 1");
  cell.config.validate();
  std::vector<Task> tasks;
  for (std::size_t g = 0; g < cell.generations; ++g) tasks.push_back({&cell, g});
  std::vector<Outcome> outcomes = run_tasks(model, lexicon, tasks, options, records != nullptr);
  if (records != nullptr) {
    for (auto& o : outcomes) {
      if (o.ok) records->push_back(std::move(o.record));
    }
  }
  return aggregate(cell, outcomes);
}

std::vector<CellResult> run_sweep(const LanguageModel& model, const Lexicon& lexicon, const SweepSpec& spec,
                                  const EvalOptions& options) {
  spec.validate();
  std::shared_ptr<const TopicBag> topic;
  if (spec.topic) topic = std::make_shared<TopicBag>(load_topic_bag(*spec.topic, model.vocabulary(), options.projection));

  std::vector<CellSpec> cells;
  for (Emotion e : spec.emotions) {
    auto bag = std::make_shared<AffectBag>(build_affect_bag(lexicon, e, model.vocabulary(), options.projection));
    for (double knob : spec.knobs) {
      for (std::size_t p = 0; p < spec.prompts.size(); ++p) {
        CellSpec c;
        c.config = spec.base;
        c.config.affect = bag;
        c.config.topic = topic;
        c.config.knob = knob;
        c.score_emotion = e;
        c.score_topic = topic;
        c.prompt_id = p;
        c.prompt = spec.prompts[p];
        c.generations = spec.generations;
        c.length = spec.length;
        c.master_seed = spec.seed;
        c.config.validate();
        cells.push_back(std::move(c));
      }
    }
  }

  std::vector<Task> tasks;
  for (const auto& c : cells) {
    for (std::size_t g = 0; g < c.generations; ++g) tasks.push_back({&c, g});
  }
  std::vector<Outcome> outcomes = run_tasks(model, lexicon, tasks, options, false);

  std::vector<CellResult> results;
  std::size_t offset = 0;
  for (const auto& c : cells) {
    results.push_back(aggregate(c, std::span(outcomes).subspan(offset, c.generations)));
    offset += c.generations;
  }
  return results;
}

std::string sweep_csv(std::span<const CellResult> cells) {
  std::string out(kSweepCsvHeader);
  out += '\n';
  char buf[256];
  for (const auto& c : cells) {
    const std::string emotion = c.emotion ? std::string(to_string(*c.emotion)) : "none";
    std::string topic;
    if (c.topic_hit_rate) {
      std::snprintf(buf, sizeof buf, "%.6f", *c.topic_hit_rate);
      topic = buf;
    }
    std::snprintf(buf, sizeof buf, "%s,%.4f,%zu,%zu,%.6f,%.6f,%.6f,%s,%d\n", emotion.c_str(), c.knob, c.prompt_id, c.n,
                  c.mean_ppl, c.median_ppl, c.mean_intensity, topic.c_str(), c.flagged ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace affectgen
