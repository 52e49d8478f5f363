#include "mscke/engine.hpp"

#include "httplib.h"
#include "json.hpp"

namespace mscke {

using nlohmann::json;

MockModelClient::MockModelClient(std::string name) : name_(std::move(name)) {}

std::string MockModelClient::fallback_echo(const std::string& prompt) {
  return "UNK:" + to_hex16(fnv1a64(prompt));
}

std::string MockModelClient::generate(const ImageRef& image, const std::string& prompt) const {
  auto it = table_.find({image, prompt});
  if (it != table_.end()) return it->second;
  return fallback_echo(prompt);
}

void MockModelClient::add_response(const ImageRef& image, const std::string& prompt,
                                   const std::string& text) {
  table_[{image, prompt}] = text;
}

void MockModelClient::load_table(const std::string& jsonl_path) {
  std::string text = read_text_file(jsonl_path);
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_number;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ParseError("malformed mock table line " + std::to_string(line_number));
    ImageRef image;
    auto img = j.find("image");
    if (img == j.end()) throw ValidationError("mock table line missing image");
    if (!img->is_null()) {
      if (!img->is_string()) throw ValidationError("mock table image must be string or null");
      image = img->get<std::string>();
    }
    auto prompt = j.find("prompt");
    auto out = j.find("text");
    if (prompt == j.end() || !prompt->is_string())
      throw ValidationError("mock table line missing prompt");
    if (out == j.end() || !out->is_string())
      throw ValidationError("mock table line missing text");
    add_response(image, prompt->get<std::string>(), out->get<std::string>());
  }
}

HttpModelClient::HttpModelClient(std::string name, std::string base_url, double timeout_seconds)
    : name_(std::move(name)), base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

std::string HttpModelClient::generate(const ImageRef& image, const std::string& prompt) const {
  httplib::Client client(base_url_);
  auto seconds = static_cast<time_t>(timeout_seconds_);
  auto usec = static_cast<time_t>((timeout_seconds_ - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, usec);
  client.set_read_timeout(seconds, usec);
  json body{{"prompt", prompt}, {"image", image ? json(*image) : json(nullptr)}};
  auto res = client.Post("/generate", body.dump(), "application/json");
  if (!res)
    throw TransportError("generate request to " + base_url_ + " failed: " +
                         httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError("generate request to " + base_url_ + " returned status " +
                         std::to_string(res->status));
  json parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("text") || !parsed["text"].is_string())
    throw TransportError("generate response missing text field");
  return parsed["text"].get<std::string>();
}

std::string compose_counterfactual_prompt(const EditExample& edit, const QueryInput& query,
                                          const std::string& prompt_template) {
  static constexpr const char* kPlaceholders[] = {"{edit_prompt}", "{edit_target}",
                                                  "{query_prompt}"};
  for (const char* ph : kPlaceholders) {
    if (prompt_template.find(ph) == std::string::npos)
      throw ConfigError(std::string("prompt template missing placeholder ") + ph);
  }
  auto replace_all = [](std::string s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
    return s;
  };
  std::string out = prompt_template;
  out = replace_all(out, "{edit_prompt}", edit.prompt);
  out = replace_all(out, "{edit_target}", edit.target);
  out = replace_all(out, "{query_prompt}", query.prompt);
  return out;
}

std::string route_name(Route route) {
  return route == Route::kBase ? "base" : "counterfactual";
}

Engine::Engine(MemoryStore memory, AlignmentHead head, const EmbeddingProvider& provider,
               const ModelClient& base, const ModelClient& counterfactual,
               std::string prompt_template, double threshold)
    : memory_(std::move(memory)), head_(std::move(head)), provider_(provider), base_(base),
      counterfactual_(counterfactual), prompt_template_(std::move(prompt_template)),
      threshold_(threshold) {
  if (!(threshold_ > 0.0 && threshold_ < 1.0))
    throw ConfigError("engine threshold must lie in (0,1)");
}

void Engine::apply_edit(const EditExample& edit) {
  add_edit(memory_, edit, head_, provider_);
}

Answer Engine::answer(const QueryInput& query) const {
  if (query.prompt.empty()) throw ValidationError("query prompt must be non-empty");
  Answer out;
  out.decision = lookup_best(memory_, query, head_, provider_);
  bool counterfactual_route =
      out.decision.k_star.has_value() && out.decision.rho >= threshold_;
  if (!counterfactual_route) {
    out.route = Route::kBase;
    try {
      out.text = base_.generate(query.image, query.prompt);
    } catch (const TransportError& e) {
      throw TransportError("base route: " + std::string(e.what()));
    }
    return out;
  }
  const EditExample& edit = memory_.entries[*out.decision.k_star].edit;
  out.route = Route::kCounterfactual;
  out.used_edit = edit.id;
  // The counterfactual model receives the edit text/target inside the
  // composed prompt and the query image; the edit image is not forwarded.
  try {
    out.text = counterfactual_.generate(
        query.image, compose_counterfactual_prompt(edit, query, prompt_template_));
  } catch (const TransportError& e) {
    throw TransportError("counterfactual route: " + std::string(e.what()));
  }
  return out;
}

}  // namespace mscke
