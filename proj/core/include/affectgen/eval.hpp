#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affectgen/bags.hpp"
#include "affectgen/control_loss.hpp"
#include "affectgen/lexicon.hpp"
#include "affectgen/model.hpp"
#include "affectgen/perturb.hpp"

namespace affectgen {

// Lowercased words of `text` with ASCII punctuation acting as a separator
// and purely numeric words dropped. Non-ASCII bytes are kept.
std::vector<std::string> scoring_words(std::string_view text);

struct IntensityScore {
  double score = 0.0;       // mean lexicon intensity over matched words
  std::size_t matched = 0;  // matched word occurrences
};

// Lexicon-mean proxy for perceived intensity. Returns {0, 0} when no word
// of `text` is listed under `emotion`.
IntensityScore intensity_score(std::string_view text, Emotion emotion, const Lexicon& lexicon);

// Fraction of records whose continuation contains at least one topic source
// word. Throws Error on an empty list.
double topic_hit_rate(std::span<const GenerationRecord> records, const TopicBag& topic);
bool mentions_topic(std::string_view text, const TopicBag& topic);

struct SweepSpec {
  std::vector<double> knobs;  // ascending, each in [0, 1]
  std::vector<Emotion> emotions;
  std::vector<std::string> prompts;
  std::size_t generations = 50;  // per cell
  std::size_t length = 20;       // tokens per generation
  std::uint64_t seed = 0;        // master seed
  std::optional<std::string> topic;
  // Steering parameters shared by every cell. Its bags, knob and sampler seed
  // are overwritten per cell.
  ControlConfig base;

  void validate() const;
};

// Key-value text, one `key = value` per line, '#' comments. List values are
// comma separated; `prompt` may repeat. Throws ParseError naming the line.
SweepSpec parse_sweep_spec(std::string_view text, const std::string& source = "<memory>");
SweepSpec load_sweep_spec(const std::filesystem::path& path);

struct CellSpec {
  ControlConfig config;  // sampler seed is replaced per generation
  std::optional<Emotion> score_emotion;
  std::shared_ptr<const TopicBag> score_topic;
  std::size_t prompt_id = 0;
  std::string prompt;
  std::size_t generations = 1;
  std::size_t length = 20;
  std::uint64_t master_seed = 0;
};

struct CellResult {
  std::optional<Emotion> emotion;
  double knob = 0.0;
  std::size_t prompt_id = 0;
  std::size_t n = 0;  // successful generations
  double mean_ppl = 0.0;
  double median_ppl = 0.0;
  // Mean intensity over generations that matched at least one lexicon word.
  double mean_intensity = 0.0;
  std::size_t scored = 0;  // generations contributing to mean_intensity
  std::optional<double> topic_hit_rate;
  bool flagged = false;  // every generation failed
};

// Seed of generation g for a prompt. Independent of emotion and knob, so
// cells that differ only in steering share their random streams.
std::uint64_t generation_seed(std::uint64_t master_seed, std::size_t prompt_id, std::size_t generation);

struct EvalOptions {
  std::size_t threads = 1;  // 0 selects hardware concurrency
  Projection projection = Projection::kFirstSubtoken;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Runs one cell; perplexity is that of the continuation under the model with
// no steering. `records` receives every successful generation in order.
CellResult evaluate_cell(const LanguageModel& model, const Lexicon& lexicon, const CellSpec& cell,
                         const EvalOptions& options = {}, std::vector<GenerationRecord>* records = nullptr);

// One result per (emotion, knob, prompt), in that nesting order.
std::vector<CellResult> run_sweep(const LanguageModel& model, const Lexicon& lexicon, const SweepSpec& spec,
                                  const EvalOptions& options = {});

inline constexpr std::string_view kSweepCsvHeader =
    "emotion,knob,prompt_id,n,mean_ppl,median_ppl,mean_intensity,topic_hit_rate,flagged";

std::string sweep_csv(std::span<const CellResult> cells);

}  // namespace affectgen
