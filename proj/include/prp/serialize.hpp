#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "prp/error.hpp"
#include "prp/layers.hpp"
#include "prp/models.hpp"
#include "prp/projections.hpp"

namespace prp {

using Json = nlohmann::json;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  auto [end, ec] = std::to_chars(buf, buf + 16, v, 16);
  std::string s(buf, end);
  return std::string(16 - s.size(), '0') + s;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error("invalid hex checksum '" + s + "'");
  }
  return v;
}

inline Json to_json(const ProjectionDescriptor& d) {
  return {{"scheme", std::string(to_string(d.scheme))},
          {"seed", d.seed},
          {"d_in", d.d_in},
          {"d_out", d.d_out},
          {"checksum", hex64(d.checksum)},
          {"transposed", d.transposed}};
}

inline ProjectionDescriptor descriptor_from_json(const Json& j) {
  ProjectionDescriptor d;
  d.scheme = parse_init_scheme(j.at("scheme").get<std::string>());
  d.seed = j.at("seed").get<std::uint64_t>();
  d.d_in = j.at("d_in").get<std::size_t>();
  d.d_out = j.at("d_out").get<std::size_t>();
  d.checksum = parse_hex64(j.at("checksum").get<std::string>());
  d.transposed = j.at("transposed").get<bool>();
  return d;
}

/// Descriptor of every PRP stage, in stage order. Dense stages are skipped.
inline Json projection_descriptors(const Sequential& model) {
  Json arr = Json::array();
  for (std::size_t k = 0; k < model.size(); ++k) {
    const auto* l = std::get_if<PRPLayer>(&model.stage(k).layer);
    if (l == nullptr) continue;
    Json e = to_json(l->projection().descriptor());
    e["stage"] = k;
    if (model.stage(k).tied_to) e["tied_to"] = *model.stage(k).tied_to;
    arr.push_back(std::move(e));
  }
  return arr;
}

// --- checkpoints -----------------------------------------------------------
//
// A checkpoint holds the learnable parameters of every stage and, for PRP
// stages, the projection descriptor. Projection entries are never written;
// loading regenerates them from (scheme, seed, shape) and checks the checksum.
// A tied stage takes a transposed view of the stage it names.

inline constexpr const char* kCheckpointSchema = "prp-checkpoint/1";

inline Json checkpoint_json(const Sequential& model, const Json& meta = Json::object()) {
  Json stages = Json::array();
  for (const auto& st : model.stages()) {
    Json s;
    s["activation"] = std::string(to_string(st.activation));
    s["tied_to"] = st.tied_to ? Json(*st.tied_to) : Json(nullptr);
    if (const auto* p = std::get_if<PRPLayer>(&st.layer)) {
      s["kind"] = "prp";
      s["projection"] = to_json(p->projection().descriptor());
      s["alpha"] = p->alpha().values();
      s["w"] = p->w().values();
      s["b"] = p->b().values();
    } else {
      const auto& d = std::get<DenseLayer>(st.layer);
      s["kind"] = "dense";
      s["d_in"] = d.d_in();
      s["d_out"] = d.d_out();
      s["weight"] = std::vector<double>(d.weight().span().begin(), d.weight().span().end());
      s["b"] = d.b().values();
    }
    stages.push_back(std::move(s));
  }
  return {{"schema", kCheckpointSchema}, {"meta", meta}, {"stages", std::move(stages)}};
}

inline Sequential model_from_checkpoint(const Json& j) {
  if (j.value("schema", "") != kCheckpointSchema) throw Error("checkpoint: unknown schema");
  Sequential model;
  for (const auto& s : j.at("stages")) {
    const auto act = parse_activation(s.at("activation").get<std::string>());
    std::optional<std::size_t> tied;
    if (!s.at("tied_to").is_null()) tied = s.at("tied_to").get<std::size_t>();
    const auto kind = s.at("kind").get<std::string>();
    if (kind == "prp") {
      const auto desc = descriptor_from_json(s.at("projection"));
      ProjectionMatrix proj;
      if (tied) {
        if (*tied >= model.size()) throw Error("checkpoint: tied_to names a later stage");
        const auto* enc = std::get_if<PRPLayer>(&model.stage(*tied).layer);
        if (enc == nullptr) throw Error("checkpoint: tied_to names a dense stage");
        proj = enc->projection().transposed_view();
        if (proj.descriptor() != desc) {
          throw Error("checkpoint: tied stage descriptor disagrees with stage " +
                      std::to_string(*tied));
        }
      } else {
        proj = regenerate(desc);
      }
      Modulation m{Vector(s.at("alpha").get<std::vector<double>>()),
                   Vector(s.at("w").get<std::vector<double>>()),
                   Vector(s.at("b").get<std::vector<double>>())};
      model.add(PRPLayer(std::move(proj), std::move(m)), act, tied);
    } else if (kind == "dense") {
      const auto d_in = s.at("d_in").get<std::size_t>();
      const auto d_out = s.at("d_out").get<std::size_t>();
      Matrix w(d_out, d_in, s.at("weight").get<std::vector<double>>());
      model.add(DenseLayer(std::move(w), Vector(s.at("b").get<std::vector<double>>())), act, tied);
    } else {
      throw Error("checkpoint: unknown stage kind '" + kind + "'");
    }
  }
  return model;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

/// Writes a new file; refuses to replace an existing one.
inline void write_new_file(const std::filesystem::path& path, const std::string& text) {
  if (std::filesystem::exists(path)) throw Error("refusing to overwrite " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot create " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

inline void save_checkpoint(const std::filesystem::path& path, const Sequential& model,
                            const Json& meta = Json::object()) {
  write_new_file(path, checkpoint_json(model, meta).dump());
}

inline Sequential load_checkpoint(const std::filesystem::path& path) {
  return model_from_checkpoint(read_json_file(path));
}

}  // namespace prp
