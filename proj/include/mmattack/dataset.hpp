#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mmattack/core.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/imageio.hpp"

namespace mmattack {

// Dataset file: one JSON record per line, fields `id`, `image_path`, `query`,
// `options` (MC only), `kind` in {mc, harmless}, optional `dimension`
// (defaults: mc -> helpful, harmless -> harmless) and optional
// `pseudo_label` / `target_index`.

using Instance = std::variant<McInstance, HarmlessInstance>;

struct Dataset {
  std::vector<McInstance> mc;
  std::vector<HarmlessInstance> harmless;
};

// Builds a typed instance from a parsed record plus its loaded image, and
// enforces every instance invariant.
inline Instance validate_instance(const json& record, Image image) {
  std::string kind = record.value("kind", std::string("mc"));
  std::string id = record.value("id", std::string());
  if (id.empty()) throw ValidationError("instance id must be non-empty");
  if (!record.contains("query")) throw ValidationError(id + ": missing query");
  Query query = Query::from_text(record.at("query").get<std::string>());
  if (query.words.empty()) throw ValidationError(id + ": empty query text");
  image.validate();

  if (kind == "mc") {
    McInstance inst;
    inst.id = id;
    inst.image = std::move(image);
    inst.query = std::move(query);
    if (!record.contains("options"))
      throw ValidationError(id + ": option count must be 3, got 0");
    const json& opts = record.at("options");
    if (!opts.is_array() || opts.size() != 3) {
      std::ostringstream os;
      os << id << ": option count must be 3, got " << (opts.is_array() ? opts.size() : 0);
      throw ValidationError(os.str());
    }
    for (std::size_t i = 0; i < 3; ++i) inst.options[i] = opts[i].get<std::string>();
    inst.dimension = record.contains("dimension")
                         ? dimension_from_string(record.at("dimension").get<std::string>())
                         : Dimension::helpful;
    if (inst.dimension == Dimension::harmless)
      throw ValidationError(id + ": mc instance cannot carry the harmless dimension");
    if (record.contains("pseudo_label")) inst.pseudo_label = record.at("pseudo_label").get<int>();
    if (record.contains("target_index")) inst.target_index = record.at("target_index").get<int>();
    inst.validate();
    return inst;
  }
  if (kind == "harmless") {
    if (record.contains("dimension") &&
        dimension_from_string(record.at("dimension").get<std::string>()) !=
            Dimension::harmless)
      throw ValidationError(id + ": harmless instance cannot carry an mc dimension");
    HarmlessInstance inst;
    inst.id = id;
    inst.image = std::move(image);
    inst.query = std::move(query);
    inst.dimension = Dimension::harmless;
    inst.validate();
    return inst;
  }
  throw ValidationError(id + ": unknown kind '" + kind + "'");
}

// Loads a JSONL dataset; image paths resolve relative to the dataset file.
inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  std::filesystem::path base = path.parent_path();
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      std::ostringstream os;
      os << path.string() << ":" << lineno << ": invalid JSON: " << e.what();
      throw ParseError(os.str());
    }
    try {
      if (!record.contains("image_path"))
        throw ValidationError("missing image_path");
      std::filesystem::path img_path = record.at("image_path").get<std::string>();
      if (img_path.is_relative()) img_path = base / img_path;
      Image image = load_image_file(img_path);
      Instance inst = validate_instance(record, std::move(image));
      if (std::holds_alternative<McInstance>(inst))
        ds.mc.push_back(std::get<McInstance>(std::move(inst)));
      else
        ds.harmless.push_back(std::get<HarmlessInstance>(std::move(inst)));
    } catch (const Error& e) {
      std::ostringstream os;
      os << path.string() << ":" << lineno << ": " << e.what();
      throw ValidationError(os.str());
    }
  }
  return ds;
}

}  // namespace mmattack
