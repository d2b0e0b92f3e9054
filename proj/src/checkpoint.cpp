#include "vip/checkpoint.hpp"

#include "vip/error.hpp"
#include "vip/hash.hpp"
#include "vip/io.hpp"

#include <json.hpp>

namespace vip {

using nlohmann::json;

std::string checkpoint_json(const EpsilonNet& net, std::uint64_t rng_seed) {
  const auto& a = net.arch();
  std::string out = "{\"format_version\":1,\"arch\":{";
  out += "\"input_dim\":" + std::to_string(a.input_dim);
  out += ",\"time_embed_dim\":" + std::to_string(a.time_embed_dim);
  out += ",\"hidden_width\":" + std::to_string(a.hidden_width);
  out += ",\"n_blocks\":" + std::to_string(a.n_blocks);
  out += ",\"block_active\":[";
  for (std::size_t i = 0; i < net.n_blocks(); ++i) out += std::string(i ? "," : "") + (net.block_active(i) ? "true" : "false");
  out += "]},\"params\":[";
  const auto names = net.param_names();
  const auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor t = Tensor::from_matrix(*params[i]);
    if (i) out += ",";
    out += "{\"name\":\"" + names[i] + "\",\"shape\":[" + std::to_string(t.shape[0]) + "," +
           std::to_string(t.shape[1]) + "],\"data\":[";
    for (std::size_t k = 0; k < t.data.size(); ++k) out += (k ? "," : "") + format_double(t.data[k]);
    out += "]}";
  }
  out += "],\"rng_seed\":" + std::to_string(rng_seed) + "}\n";
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != 1) throw Error("checkpoint: unsupported format_version");
    const auto& a = doc.at("arch");
    NetArch arch{a.at("input_dim").get<int>(), a.at("time_embed_dim").get<int>(), a.at("hidden_width").get<int>(),
                 a.at("n_blocks").get<int>()};
    auto mask = a.at("block_active").get<std::vector<bool>>();
    const auto expected = EpsilonNet::create(arch, 0).param_names();
    const auto& params = doc.at("params");
    if (params.size() != expected.size())
      throw ShapeError("params", "checkpoint: expected " + std::to_string(expected.size()) + " parameters");
    std::vector<Matrix> values;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      const auto name = p.at("name").get<std::string>();
      if (name != expected[i]) throw Error("checkpoint: expected parameter '" + expected[i] + "', found '" + name + "'");
      Tensor t{p.at("shape").get<std::vector<std::size_t>>(), p.at("data").get<std::vector<double>>()};
      t.validate(name);
      values.push_back(t.to_matrix());
    }
    return {EpsilonNet::from_params(arch, std::move(mask), values), doc.at("rng_seed").get<std::uint64_t>()};
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

std::string save_checkpoint(const EpsilonNet& net, std::uint64_t rng_seed, const std::filesystem::path& path) {
  const auto text = checkpoint_json(net, rng_seed);
  write_text_file(path, text);
  return sha256_hex(text);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text_file(path)); }

}  // namespace vip
