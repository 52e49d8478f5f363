#include "mscke/core.hpp"

#include <fstream>

#include "json.hpp"

namespace mscke {

using nlohmann::json;

namespace {

std::string at_line(std::size_t line_number) {
  return line_number ? " (line " + std::to_string(line_number) + ")" : "";
}

const json& require_field(const json& j, const char* name, std::size_t line_number) {
  auto it = j.find(name);
  if (it == j.end())
    throw ValidationError(std::string("missing field: ") + name + at_line(line_number));
  return *it;
}

std::string require_string(const json& j, const char* name, std::size_t line_number) {
  const json& v = require_field(j, name, line_number);
  if (!v.is_string())
    throw ValidationError(std::string("field is not a string: ") + name + at_line(line_number));
  return v.get<std::string>();
}

std::string require_nonempty(const json& j, const char* name, std::size_t line_number) {
  std::string s = require_string(j, name, line_number);
  if (s.empty())
    throw ValidationError(std::string("field must be non-empty: ") + name + at_line(line_number));
  return s;
}

ImageRef read_image(const json& j, const char* name, std::size_t line_number) {
  const json& v = require_field(j, name, line_number);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string())
    throw ValidationError(std::string("field must be string or null: ") + name + at_line(line_number));
  ImageRef ref = v.get<std::string>();
  validate_image_ref(ref, name);
  return ref;
}

json image_to_json(const ImageRef& image) {
  if (!image) return nullptr;
  return *image;
}

json parse_json_line(const std::string& line, std::size_t line_number) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw ParseError("malformed JSON" + at_line(line_number));
  if (!j.is_object())
    throw ParseError("expected a JSON object" + at_line(line_number));
  return j;
}

}  // namespace

void validate_image_ref(const ImageRef& image, const std::string& field) {
  if (!image) return;
  if (image->empty())
    throw ValidationError("field must be non-empty or null: " + field);
  for (unsigned char c : *image) {
    if (c < 0x20 || c == 0x7f)
      throw ValidationError("control character in field: " + field);
  }
}

DatasetRecord parse_record(const std::string& line, std::size_t line_number) {
  json j = parse_json_line(line, line_number);

  DatasetRecord r;
  r.image = read_image(j, "image", line_number);
  r.edit_prompt = require_nonempty(j, "edit_prompt", line_number);
  r.edit_target = require_nonempty(j, "edit_target", line_number);
  // rephrase_prompt must be present but may be empty; evaluation skips such
  // records for generality and lists them in the report.
  r.rephrase_prompt = require_string(j, "rephrase_prompt", line_number);
  r.locality_prompt = require_nonempty(j, "locality_prompt", line_number);
  r.locality_truth = require_nonempty(j, "locality_truth", line_number);

  const json& in_list = require_field(j, "in_scope", line_number);
  if (!in_list.is_array())
    throw ValidationError("field must be an array: in_scope" + at_line(line_number));
  for (const json& e : in_list) {
    if (!e.is_object())
      throw ValidationError("in_scope entry must be an object" + at_line(line_number));
    ScopeEntryIn entry;
    entry.prompt = require_nonempty(e, "prompt", line_number);
    entry.target = require_nonempty(e, "target", line_number);
    r.in_scope.push_back(std::move(entry));
  }

  const json& out_list = require_field(j, "out_scope", line_number);
  if (!out_list.is_array())
    throw ValidationError("field must be an array: out_scope" + at_line(line_number));
  for (const json& e : out_list) {
    if (!e.is_object())
      throw ValidationError("out_scope entry must be an object" + at_line(line_number));
    ScopeEntryOut entry;
    entry.prompt = require_nonempty(e, "prompt", line_number);
    r.out_scope.push_back(std::move(entry));
  }

  if (auto it = j.find("hard_in"); it != j.end()) {
    if (!it->is_boolean())
      throw ValidationError("field must be a boolean: hard_in" + at_line(line_number));
    r.hard_in = it->get<bool>();
  }
  if (auto it = j.find("hard_out"); it != j.end()) {
    if (!it->is_boolean())
      throw ValidationError("field must be a boolean: hard_out" + at_line(line_number));
    r.hard_out = it->get<bool>();
  }
  return r;
}

std::string serialize_record(const DatasetRecord& record) {
  json j;
  j["image"] = image_to_json(record.image);
  j["edit_prompt"] = record.edit_prompt;
  j["edit_target"] = record.edit_target;
  j["rephrase_prompt"] = record.rephrase_prompt;
  j["locality_prompt"] = record.locality_prompt;
  j["locality_truth"] = record.locality_truth;
  json in_list = json::array();
  for (const ScopeEntryIn& e : record.in_scope)
    in_list.push_back(json{{"prompt", e.prompt}, {"target", e.target}});
  j["in_scope"] = std::move(in_list);
  json out_list = json::array();
  for (const ScopeEntryOut& e : record.out_scope)
    out_list.push_back(json{{"prompt", e.prompt}});
  j["out_scope"] = std::move(out_list);
  j["hard_in"] = record.hard_in;
  j["hard_out"] = record.hard_out;
  return j.dump();  // nlohmann objects keep keys sorted
}

std::vector<DatasetRecord> read_dataset_file(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<DatasetRecord> records;
  std::size_t line_number = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(parse_record(line, line_number));
  }
  return records;
}

void write_dataset_file(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const DatasetRecord& r : records) {
    out += serialize_record(r);
    out += '\n';
  }
  write_text_file(path, out);
}

EditExample parse_edit_example(const std::string& line, std::size_t line_number) {
  json j = parse_json_line(line, line_number);
  EditExample e;
  e.image = read_image(j, "image", line_number);
  e.prompt = require_nonempty(j, "prompt", line_number);
  e.target = require_nonempty(j, "target", line_number);
  e.id = require_nonempty(j, "id", line_number);
  return e;
}

std::string serialize_edit_example(const EditExample& edit) {
  json j;
  j["id"] = edit.id;
  j["image"] = image_to_json(edit.image);
  j["prompt"] = edit.prompt;
  j["target"] = edit.target;
  return j.dump();
}

}  // namespace mscke
