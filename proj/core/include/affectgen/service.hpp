#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "affectgen/bags.hpp"
#include "affectgen/control_loss.hpp"
#include "affectgen/lexicon.hpp"
#include "affectgen/model.hpp"

namespace affectgen {

struct ServiceOptions {
  std::size_t max_length = 200;
  std::chrono::milliseconds timeout{60'000};
  std::size_t session_limit = 4;
  Projection projection = Projection::kFirstSubtoken;
  // Perturbation step applied to every request. Small reference models need
  // a much larger step than the library default to be steered at all.
  double step_size = ControlConfig{}.step_size;
};

struct GenerateRequest {
  std::string prompt;
  std::optional<Emotion> emotion;
  double knob = 0.5;
  double variance = 0.05;
  std::optional<std::string> topic;
  std::size_t length = 20;
  std::optional<std::uint64_t> seed;
  double kl_scale = 0.01;
  double topic_scale = 1.0;
  double affect_scale = 1.0;
  bool greedy = false;
  bool stream = false;
};

struct FieldError {
  std::string field;
  std::string message;
};

// Validates a /generate body. Topics are restricted to the built-in names.
std::variant<GenerateRequest, std::vector<FieldError>> parse_generate_request(const nlohmann::json& body,
                                                                              const ServiceOptions& options);

// JSON front end over one shared model. Endpoints:
//   GET  /meta      emotions, topics, parameter bounds, model id
//   POST /generate  full response, or server-sent events when "stream" is true
class Service {
 public:
  // `model` may be null until set_model() is called; /generate answers 503
  // meanwhile.
  Service(std::shared_ptr<const LanguageModel> model, std::shared_ptr<const Lexicon> lexicon,
          ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void set_model(std::shared_ptr<const LanguageModel> model);

  // Binds (port 0 picks a free port), serves on a background thread and
  // returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host, int port);
  // Binds and serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

  nlohmann::json meta() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace affectgen
