// affectgen: train the reference model, generate steered text, run knob
// sweeps and serve the JSON API.
//
// Exit status: 0 success, 1 usage error, 2 runtime failure.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "affectgen/bags.hpp"
#include "affectgen/control_loss.hpp"
#include "affectgen/error.hpp"
#include "affectgen/eval.hpp"
#include "affectgen/lexicon.hpp"
#include "affectgen/model.hpp"
#include "affectgen/perturb.hpp"
#include "affectgen/record_json.hpp"
#include "affectgen/service.hpp"
#include "affectgen/trainer.hpp"

namespace {

using namespace affectgen;

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

// Raised for bad flag combinations discovered after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> emotion_names() {
  std::vector<std::string> names;
  for (Emotion e : kAllEmotions) names.emplace_back(to_string(e));
  return names;
}

struct TrainFlags {
  std::string corpus, out;
  ReferenceLMConfig config{.layers = 2, .heads = 4, .embed_dim = 64, .context = 64, .vocab_size = 3000, .seed = 1};
  TrainOptions options;
  std::size_t max_tokens = 0;
};

int run_train(const TrainFlags& f) {
  auto words = tokenize_words(read_file(f.corpus));
  if (f.max_tokens > 0 && words.size() > f.max_tokens) words.resize(f.max_tokens);
  std::cerr << "corpus: " << words.size() << " tokens\n";
  TrainOptions options = f.options;
  options.on_epoch = [&](std::size_t epoch, double loss) {
    std::fprintf(stderr, "epoch %zu/%zu  loss %.4f\n", epoch + 1, f.options.epochs, loss);
  };
  const TrainResult result = train_reference(words, f.config, options);
  result.model.save(f.out);
  std::cerr << "wrote " << f.out << " (" << result.model.model_id() << ", vocabulary "
            << result.model.vocabulary().size() << ")\n";
  return 0;
}

struct SteeringFlags {
  std::string lexicon = AFFECTGEN_DEFAULT_LEXICON;
  std::optional<std::string> emotion;
  std::optional<std::string> topic;
  ControlConfig config;
  bool greedy = false;
  bool norm_scaling = false;
  std::size_t window = 0;
};

void add_steering_flags(CLI::App& cmd, SteeringFlags& f) {
  cmd.add_option("--lexicon", f.lexicon, "Emotion intensity lexicon (TSV)")->envname("AFFECTGEN_LEXICON")
      ->check(CLI::ExistingFile)->capture_default_str();
  cmd.add_option("--emotion", f.emotion, "Emotion to steer towards")->check(CLI::IsMember(emotion_names()));
  cmd.add_option("--knob", f.config.knob, "Target intensity in [0, 1]")->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd.add_option("--var", f.config.variance, "Variance of the intensity kernel (> 0)")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd.add_option("--topic", f.topic, "Built-in topic name or word-list file");
  cmd.add_option("--kl-scale", f.config.weights.kl_scale)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd.add_option("--topic-scale", f.config.weights.topic_scale)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd.add_option("--affect-scale", f.config.weights.affect_scale)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd.add_option("--step-size", f.config.step_size, "Gradient step size")->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd.add_option("--iterations", f.config.gd_iterations, "Gradient steps per token")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd.add_option("--window", f.window, "Perturb only the most recent N positions (0: all)");
  cmd.add_flag("--norm-scaling", f.norm_scaling, "Normalize each gradient tensor before stepping");
  cmd.add_option("--top-k", f.config.sampler.k)->check(CLI::PositiveNumber)->capture_default_str();
  cmd.add_option("--temperature", f.config.sampler.temperature)->check(CLI::PositiveNumber)->capture_default_str();
  cmd.add_flag("--greedy", f.greedy, "Argmax decoding instead of top-k sampling");
}

ControlConfig resolve(const SteeringFlags& f, const Lexicon& lexicon, const LanguageModel& model) {
  ControlConfig c = f.config;
  if (f.emotion) {
    c.affect = std::make_shared<AffectBag>(build_affect_bag(lexicon, *parse_emotion(*f.emotion), model.vocabulary()));
  }
  if (f.topic) c.topic = std::make_shared<TopicBag>(load_topic_bag(*f.topic, model.vocabulary()));
  if (f.window > 0) c.window = f.window;
  c.scaling = f.norm_scaling ? GradientScaling::kPerTensorNorm : GradientScaling::kRaw;
  c.sampler.mode = f.greedy ? SamplerMode::kGreedy : SamplerMode::kTopK;
  return c;
}

std::string optional_cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

void print_trace(const GenerationRecord& r) {
  std::printf("%5s  %-16s %9s %9s %9s %9s %9s %s\n", "step", "token", "kld", "topic", "affect", "total", "kl", "flag");
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const StepTrace& s = r.steps[i];
    std::printf("%5zu  %-16s %9.4f %9s %9s %9.4f %9.5f %s\n", i, s.text.c_str(), s.loss.kld,
                optional_cell(s.loss.topic).c_str(), optional_cell(s.loss.affect).c_str(), s.loss.total, s.kl,
                s.flagged ? "!" : "");
  }
}

struct GenerateFlags {
  std::string model, prompt;
  std::size_t length = 20;
  std::uint64_t seed = 0;
  bool trace = false, json = false;
  SteeringFlags steering;
};

int run_generate(const GenerateFlags& f) {
  const ReferenceModel model = ReferenceModel::load(f.model);
  const Lexicon lexicon = load_nrc_eil(f.steering.lexicon);
  ControlConfig config = resolve(f.steering, lexicon, model);
  config.sampler.seed = f.seed;
  const GenerationRecord record = generate(model, f.prompt, f.length, config);
  if (f.json) {
    std::cout << to_response_json(record, lexicon).dump(2) << "\n";
    return 0;
  }
  std::vector<TokenId> all = record.prompt_tokens;
  all.insert(all.end(), record.tokens.begin(), record.tokens.end());
  std::cout << model.vocabulary().decode(all) << "\n";
  if (f.trace) {
    std::cout << "\n";
    print_trace(record);
    std::printf("mean kl %.6f, flagged steps %zu\n", record.mean_kl(), record.flagged_steps());
  }
  return 0;
}

struct SweepFlags {
  std::string model, spec, out, lexicon = AFFECTGEN_DEFAULT_LEXICON;
  std::size_t threads = 0;
};

int run_sweep_cmd(const SweepFlags& f) {
  SweepSpec spec;
  try {
    spec = load_sweep_spec(f.spec);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  const ReferenceModel model = ReferenceModel::load(f.model);
  const Lexicon lexicon = load_nrc_eil(f.lexicon);
  EvalOptions options;
  options.threads = f.threads;
  options.progress = [](std::size_t done, std::size_t total) {
    if (done == total || done % 50 == 0) std::fprintf(stderr, "\r%zu/%zu generations", done, total);
    if (done == total) std::fputc('\n', stderr);
  };
  const auto cells = run_sweep(model, lexicon, spec, options);
  std::ofstream out(f.out, std::ios::binary);
  if (!out) throw IoError("cannot write " + f.out);
  out << sweep_csv(cells);
  std::cerr << "wrote " << cells.size() << " rows to " << f.out << "\n";
  return 0;
}

struct ServeFlags {
  std::string model, lexicon = AFFECTGEN_DEFAULT_LEXICON, host = "127.0.0.1";
  int port = 8080;
  ServiceOptions options;
  double timeout_s = 60.0;
};

Service* g_service = nullptr;

int run_serve(const ServeFlags& f) {
  auto lexicon = std::make_shared<Lexicon>(load_nrc_eil(f.lexicon));
  ServiceOptions options = f.options;
  options.timeout = std::chrono::milliseconds(static_cast<long long>(f.timeout_s * 1000.0));
  Service service(nullptr, lexicon, options);
  service.set_model(std::make_shared<ReferenceModel>(ReferenceModel::load(f.model)));
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  std::cerr << "listening on http://" << f.host << ":" << f.port << "\n";
  service.listen(f.host, f.port);
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decode-time affect steering for language models"};
  app.require_subcommand(1);

  TrainFlags train;
  auto* cmd_train = app.add_subcommand("train", "Train the reference language model on a text corpus");
  cmd_train->add_option("--corpus", train.corpus, "UTF-8 text corpus")->required()->check(CLI::ExistingFile);
  cmd_train->add_option("--out", train.out, "Checkpoint to write")->required();
  cmd_train->add_option("--layers", train.config.layers)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--heads", train.config.heads)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--dim", train.config.embed_dim)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--context", train.config.context)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--vocab", train.config.vocab_size, "Maximum vocabulary size")->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_train->add_option("--epochs", train.options.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--seed", train.config.seed)->capture_default_str();
  cmd_train->add_option("--lr", train.options.learning_rate)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--batch", train.options.batch_sequences)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--min-count", train.options.min_count)->capture_default_str();
  cmd_train->add_option("--max-tokens", train.max_tokens, "Use only the first N corpus tokens (0: all)");

  GenerateFlags gen;
  auto* cmd_gen = app.add_subcommand("generate", "Generate steered text");
  cmd_gen->add_option("--model", gen.model)->required()->check(CLI::ExistingFile)->envname("AFFECTGEN_MODEL");
  cmd_gen->add_option("--prompt", gen.prompt)->required();
  cmd_gen->add_option("--length", gen.length)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_gen->add_option("--seed", gen.seed)->capture_default_str();
  cmd_gen->add_flag("--trace", gen.trace, "Print the per-step loss table");
  cmd_gen->add_flag("--json", gen.json, "Print the full generation record as JSON");
  add_steering_flags(*cmd_gen, gen.steering);

  SweepFlags sweep;
  auto* cmd_sweep = app.add_subcommand("sweep", "Run a knob sweep and write CSV");
  cmd_sweep->add_option("--model", sweep.model)->required()->check(CLI::ExistingFile)->envname("AFFECTGEN_MODEL");
  cmd_sweep->add_option("--spec", sweep.spec)->required()->check(CLI::ExistingFile);
  cmd_sweep->add_option("--out", sweep.out)->required();
  cmd_sweep->add_option("--lexicon", sweep.lexicon)->check(CLI::ExistingFile)->envname("AFFECTGEN_LEXICON")
      ->capture_default_str();
  cmd_sweep->add_option("--threads", sweep.threads, "Worker threads (0: all cores)")->capture_default_str();

  ServeFlags serve;
  auto* cmd_serve = app.add_subcommand("serve", "Serve the JSON API");
  cmd_serve->add_option("--model", serve.model)->required()->check(CLI::ExistingFile)->envname("AFFECTGEN_MODEL");
  cmd_serve->add_option("--lexicon", serve.lexicon)->check(CLI::ExistingFile)->envname("AFFECTGEN_LEXICON")
      ->capture_default_str();
  cmd_serve->add_option("--host", serve.host)->capture_default_str();
  cmd_serve->add_option("--port", serve.port)->envname("AFFECTGEN_PORT")->capture_default_str();
  cmd_serve->add_option("--session-limit", serve.options.session_limit)->envname("AFFECTGEN_SESSION_LIMIT")
      ->check(CLI::PositiveNumber)->capture_default_str();
  cmd_serve->add_option("--step-size", serve.options.step_size, "Perturbation step size for every request")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd_serve->add_option("--max-length", serve.options.max_length)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_serve->add_option("--timeout", serve.timeout_s, "Per-request timeout in seconds")->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*cmd_train) return run_train(train);
    if (*cmd_gen) return run_generate(gen);
    if (*cmd_sweep) return run_sweep_cmd(sweep);
    if (*cmd_serve) return run_serve(serve);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
