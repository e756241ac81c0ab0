#include "affectgen/service.hpp"

#include <atomic>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>

#include "affectgen/error.hpp"
#include "affectgen/eval.hpp"
#include "affectgen/perturb.hpp"
#include "affectgen/record_json.hpp"

namespace affectgen {
namespace {

using nlohmann::json;

constexpr const char* kJson = "application/json";

std::string sse_event(const json& event) { return "data: " + event.dump() + "\n\n"; }

json errors_json(const std::vector<FieldError>& errors) {
  json list = json::array();
  for (const auto& e : errors) list.push_back({{"field", e.field}, {"message", e.message}});
  return {{"errors", list}};
}

json error_json(const std::string& message) { return {{"error", message}}; }

// Reads an optional numeric field; records a field error on a type mismatch.
std::optional<double> number_field(const json& body, const char* key, std::vector<FieldError>& errors) {
  if (!body.contains(key) || body[key].is_null()) return std::nullopt;
  if (!body[key].is_number()) {
    errors.push_back({key, "must be a number"});
    return std::nullopt;
  }
  return body[key].get<double>();
}

}  // namespace

std::variant<GenerateRequest, std::vector<FieldError>> parse_generate_request(const json& body,
                                                                              const ServiceOptions& options) {
  std::vector<FieldError> errors;
  GenerateRequest r;
  if (!body.is_object()) return std::vector<FieldError>{{"body", "must be a JSON object"}};

  if (!body.contains("prompt") || !body["prompt"].is_string()) {
    errors.push_back({"prompt", "is required and must be a string"});
  } else {
    r.prompt = body["prompt"].get<std::string>();
    if (tokenize_words(r.prompt).empty()) errors.push_back({"prompt", "must contain at least one word"});
  }

  if (body.contains("emotion") && !body["emotion"].is_null()) {
    const auto e = body["emotion"].is_string() ? parse_emotion(body["emotion"].get<std::string>()) : std::nullopt;
    if (!e) {
      errors.push_back({"emotion", "must be one of " + emotion_names_joined()});
    } else {
      r.emotion = e;
    }
  }

  if (auto v = number_field(body, "knob", errors)) {
    r.knob = *v;
    if (!(r.knob >= 0.0 && r.knob <= 1.0)) errors.push_back({"knob", "must lie in [0, 1]"});
  }
  if (auto v = number_field(body, "variance", errors)) {
    r.variance = *v;
    if (!(r.variance > 0.0) || !std::isfinite(r.variance)) errors.push_back({"variance", "must be > 0"});
  }

  if (body.contains("topic") && !body["topic"].is_null()) {
    if (!body["topic"].is_string() || !builtin_topic_words(body["topic"].get<std::string>())) {
      std::string names;
      for (const auto& n : builtin_topic_names()) names += (names.empty() ? "" : ", ") + n;
      errors.push_back({"topic", "must be one of " + names});
    } else {
      r.topic = body["topic"].get<std::string>();
    }
  }

  if (body.contains("length")) {
    const auto& l = body["length"];
    if (!l.is_number_integer() || l.get<long long>() < 1 ||
        static_cast<unsigned long long>(l.get<long long>()) > options.max_length) {
      errors.push_back({"length", "must be an integer in [1, " + std::to_string(options.max_length) + "]"});
    } else {
      r.length = l.get<std::size_t>();
    }
  }

  if (body.contains("seed") && !body["seed"].is_null()) {
    if (!body["seed"].is_number_unsigned()) {
      errors.push_back({"seed", "must be a non-negative integer"});
    } else {
      r.seed = body["seed"].get<std::uint64_t>();
    }
  }

  if (body.contains("weights") && !body["weights"].is_null()) {
    const json& w = body["weights"];
    if (!w.is_object()) {
      errors.push_back({"weights", "must be an object"});
    } else {
      for (auto [key, target] : {std::pair{"kl_scale", &r.kl_scale}, std::pair{"topic_scale", &r.topic_scale},
                                 std::pair{"affect_scale", &r.affect_scale}}) {
        if (auto v = number_field(w, key, errors)) {
          *target = *v;
          if (!(*v >= 0.0) || !std::isfinite(*v)) errors.push_back({std::string("weights.") + key, "must be >= 0"});
        }
      }
    }
  }

  for (auto [key, target] : {std::pair{"greedy", &r.greedy}, std::pair{"stream", &r.stream}}) {
    if (body.contains(key)) {
      if (!body[key].is_boolean()) {
        errors.push_back({key, "must be a boolean"});
      } else {
        *target = body[key].get<bool>();
      }
    }
  }

  if (!errors.empty()) return errors;
  return r;
}

struct Service::Impl {
  std::shared_ptr<const LanguageModel> model;
  mutable std::mutex model_mutex;
  std::shared_ptr<const Lexicon> lexicon;
  ServiceOptions options;
  httplib::Server server;
  std::thread thread;
  std::atomic<std::size_t> active{0};

  // Bags depend on the model vocabulary; rebuilt lazily per model.
  std::mutex bag_mutex;
  const LanguageModel* bag_model = nullptr;
  std::map<Emotion, std::shared_ptr<const AffectBag>> affect_bags;
  std::map<std::string, std::shared_ptr<const TopicBag>> topic_bags;

  std::shared_ptr<const LanguageModel> current_model() const {
    std::lock_guard lock(model_mutex);
    return model;
  }

  void refresh_bags(const LanguageModel& m) {
    if (bag_model == &m) return;
    affect_bags.clear();
    topic_bags.clear();
    bag_model = &m;
  }

  std::shared_ptr<const AffectBag> affect_bag(const LanguageModel& m, Emotion e) {
    std::lock_guard lock(bag_mutex);
    refresh_bags(m);
    auto& slot = affect_bags[e];
    if (!slot) slot = std::make_shared<AffectBag>(build_affect_bag(*lexicon, e, m.vocabulary(), options.projection));
    return slot;
  }

  std::shared_ptr<const TopicBag> topic_bag(const LanguageModel& m, const std::string& name) {
    std::lock_guard lock(bag_mutex);
    refresh_bags(m);
    auto& slot = topic_bags[name];
    if (!slot) slot = std::make_shared<TopicBag>(load_topic_bag(name, m.vocabulary(), options.projection));
    return slot;
  }

  ControlConfig to_config(const LanguageModel& m, const GenerateRequest& r) {
    ControlConfig c;
    c.step_size = options.step_size;
    try {
      if (r.emotion) c.affect = affect_bag(m, *r.emotion);
    } catch (const Error& e) {
      throw ConfigError("emotion", e.what());
    }
    try {
      if (r.topic) c.topic = topic_bag(m, *r.topic);
    } catch (const Error& e) {
      throw ConfigError("topic", e.what());
    }
    c.knob = r.knob;
    c.variance = r.variance;
    c.weights = {r.kl_scale, r.topic_scale, r.affect_scale};
    c.sampler.mode = r.greedy ? SamplerMode::kGreedy : SamplerMode::kTopK;
    c.sampler.seed = r.seed ? *r.seed : std::random_device{}();
    return c;
  }

  void handle_generate(const httplib::Request& req, httplib::Response& res);
  void install_routes(Service& owner);
};

void Service::Impl::handle_generate(const httplib::Request& req, httplib::Response& res) {
  const auto model_ptr = current_model();
  if (!model_ptr) {
    res.status = 503;
    res.set_content(error_json("model not ready").dump(), kJson);
    return;
  }
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::parse_error&) {
    res.status = 400;
    res.set_content(errors_json({{"body", "is not valid JSON"}}).dump(), kJson);
    return;
  }
  auto parsed = parse_generate_request(body, options);
  if (auto* errors = std::get_if<std::vector<FieldError>>(&parsed)) {
    res.status = 400;
    res.set_content(errors_json(*errors).dump(), kJson);
    return;
  }
  const GenerateRequest request = std::get<GenerateRequest>(parsed);

  if (++active > options.session_limit) {
    --active;
    res.status = 503;
    res.set_content(error_json("session limit reached").dump(), kJson);
    return;
  }
  // Held until the response (or its event stream) is finished.
  std::shared_ptr<void> release(nullptr, [this](void*) { --active; });

  ControlConfig config;
  try {
    config = to_config(*model_ptr, request);
    config.validate();
  } catch (const ConfigError& e) {
    res.status = 400;
    res.set_content(errors_json({{e.field(), e.what()}}).dump(), kJson);
    return;
  }
  const auto deadline = std::chrono::steady_clock::now() + options.timeout;

  if (!request.stream) {
    try {
      bool timed_out = false;
      const GenerationRecord record =
          generate(*model_ptr, request.prompt, request.length, config, [&](std::size_t, const StepTrace&) {
            timed_out = std::chrono::steady_clock::now() > deadline;
            return !timed_out;
          });
      if (timed_out) {
        res.status = 504;
        res.set_content(error_json("generation exceeded the request timeout").dump(), kJson);
        return;
      }
      res.set_content(to_response_json(record, *lexicon, true).dump(), kJson);
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(error_json(e.what()).dump(), kJson);
    }
    return;
  }

  res.set_header("Cache-Control", "no-cache");
  res.set_chunked_content_provider(
      "text/event-stream", [this, model_ptr, request, config, deadline, release](std::size_t, httplib::DataSink& sink) {
        bool client_gone = false;
        bool timed_out = false;
        try {
          const GenerationRecord record = generate(
              *model_ptr, request.prompt, request.length, config, [&](std::size_t i, const StepTrace& s) {
                const std::string event = sse_event({{"type", "token"},
                                                     {"index", i},
                                                     {"token", s.token},
                                                     {"text", s.text},
                                                     {"loss_total", s.loss.total},
                                                     {"kl", s.kl},
                                                     {"flagged", s.flagged}});
                client_gone = !sink.write(event.data(), event.size());
                timed_out = std::chrono::steady_clock::now() > deadline;
                return !client_gone && !timed_out;
              });
          if (client_gone) return false;
          json summary = timed_out ? json{{"type", "error"}, {"message", "generation exceeded the request timeout"}}
                                   : to_response_json(record, *lexicon, true);
          if (!timed_out) summary["type"] = "summary";
          const std::string event = sse_event(summary);
          sink.write(event.data(), event.size());
        } catch (const Error& e) {
          const std::string event = sse_event({{"type", "error"}, {"message", e.what()}});
          sink.write(event.data(), event.size());
        }
        sink.done();
        return true;
      });
}

void Service::Impl::install_routes(Service& owner) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Get("/meta", [&owner](const httplib::Request&, httplib::Response& res) {
    res.set_content(owner.meta().dump(), kJson);
  });
  server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) { handle_generate(req, res); });
}

Service::Service(std::shared_ptr<const LanguageModel> model, std::shared_ptr<const Lexicon> lexicon,
                 ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
  if (!lexicon) throw Error("service needs a lexicon");
  if (options.session_limit < 1) throw ConfigError("session_limit", "must be at least 1");
  impl_->model = std::move(model);
  impl_->lexicon = std::move(lexicon);
  impl_->options = options;
  impl_->install_routes(*this);
}

Service::~Service() { stop(); }

void Service::set_model(std::shared_ptr<const LanguageModel> model) {
  std::lock_guard lock(impl_->model_mutex);
  impl_->model = std::move(model);
}

int Service::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

json Service::meta() const {
  json emotions = json::array();
  for (Emotion e : kAllEmotions) emotions.push_back(to_string(e));
  const auto model = impl_->current_model();
  const ControlConfig defaults;
  return {{"schema_version", kSchemaVersion},
          {"model_id", model ? json(model->model_id()) : json(nullptr)},
          {"ready", model != nullptr},
          {"emotions", emotions},
          {"topics", builtin_topic_names()},
          {"bounds",
           {{"knob", {{"min", 0.0}, {"max", 1.0}}},
            {"variance", {{"min", 0.0}, {"min_exclusive", true}, {"suggested_min", 0.005}, {"suggested_max", 0.5}}},
            {"length", {{"min", 1}, {"max", impl_->options.max_length}}},
            {"weights", {{"min", 0.0}}}}},
          {"defaults",
           {{"knob", defaults.knob},
            {"variance", defaults.variance},
            {"length", 20},
            {"step_size", impl_->options.step_size},
            {"weights",
             {{"kl_scale", defaults.weights.kl_scale},
              {"topic_scale", defaults.weights.topic_scale},
              {"affect_scale", defaults.weights.affect_scale}}}}}};
}

}  // namespace affectgen
