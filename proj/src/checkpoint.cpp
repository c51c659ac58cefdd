#include "trajvae/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace trajvae {

using nlohmann::json;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json j;
    j["format"] = "trajvae-checkpoint";
    j["version"] = 1;
    j["meta"] = ckpt.meta;
    j["schema"] = json::parse(ckpt.schema.to_json_line());
    j["model_config"] = json::parse(ckpt.config.to_json());
    j["scaler"] = json::parse(ckpt.scaler.to_json());
    json params = json::object();
    ckpt.params.visit([&](const std::string& name, const Dense& d) {
        params[name] = {{"shape", d.W.shape}, {"W", d.W.data}, {"b", d.b.data}};
    });
    j["params"] = std::move(params);

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw ParseError(tmp + ": cannot open for writing");
        out << j.dump();
    }
    std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    json j = json::parse(in);
    if (j.value("format", "") != "trajvae-checkpoint") throw ParseError(path + ": not a checkpoint file");

    Checkpoint ckpt;
    ckpt.meta = j.value("meta", "");
    ckpt.schema = FeatureSchema::from_json_line(j.at("schema").dump());
    ckpt.config = ModelConfig::from_json(j.at("model_config").dump(), ckpt.schema);
    ckpt.scaler = ScalerStats::from_json(j.at("scaler").dump());
    ckpt.params = ModelParameters::create(ckpt.config, ckpt.schema);
    const json& params = j.at("params");
    ckpt.params.visit([&](const std::string& name, Dense& d) {
        if (!params.contains(name)) throw ParseError(path + ": checkpoint missing parameter '" + name + "'");
        const json& jp = params[name];
        auto shape = jp.at("shape").get<std::vector<int>>();
        if (shape != d.W.shape)
            throw ParseError(path + ": parameter '" + name + "' shape incompatible with config/schema");
        d.W.data = jp.at("W").get<std::vector<double>>();
        d.b.data = jp.at("b").get<std::vector<double>>();
        if (d.W.size() != Tensor::shape_size(shape) || !d.W.all_finite() || !d.b.all_finite())
            throw ParseError(path + ": parameter '" + name + "' is corrupt");
    });
    return ckpt;
}

}  // namespace trajvae
