#include "mass/core/error.hpp"
#include "mass/downstream/downstream.hpp"

#include <algorithm>

namespace mass::downstream {

using nlohmann::json;

namespace {

void reject_unknown(json const& j, std::vector<std::string> const& known, char const* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " config must be a JSON object");
    for (auto const& [k, _] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("unknown key '" + k + "' in " + what + " config");
    }
}

Shape3 read_shape(json const& j) {
    auto const v = j.get<std::vector<int64_t>>();
    if (v.size() != 3) throw ConfigError("crop must have three extents");
    return {v[0], v[1], v[2]};
}

} // namespace

void to_json(json& j, IcConfig const& c) {
    j = json{{"crop", c.crop},
             {"averaging", c.averaging == Averaging::EMBEDDING ? "embedding" : "probability"},
             {"threshold", c.threshold}};
}

void from_json(json const& j, IcConfig& c) {
    reject_unknown(j, {"crop", "averaging", "threshold"}, "in-context");
    try {
        if (j.contains("crop")) c.crop = read_shape(j["crop"]);
        if (j.contains("averaging")) {
            auto const a = j["averaging"].get<std::string>();
            if (a == "embedding") c.averaging = Averaging::EMBEDDING;
            else if (a == "probability") c.averaging = Averaging::PROBABILITY;
            else throw ConfigError("averaging must be embedding or probability, got '" + a + "'");
        }
        c.threshold = j.value("threshold", c.threshold);
    } catch (json::exception const& e) {
        throw ConfigError(std::string("bad in-context config: ") + e.what());
    }
}

void to_json(json& j, FinetuneConfig const& c) {
    j = json{{"epochs", c.epochs},         {"steps_per_epoch", c.steps_per_epoch},
             {"batch_size", c.batch_size}, {"lr", c.lr},
             {"weight_decay", c.weight_decay}, {"patience", c.patience},
             {"early_stopping", c.early_stopping}, {"seed", c.seed},
             {"ic", c.ic},                 {"augment", c.augment}};
}

void from_json(json const& j, FinetuneConfig& c) {
    reject_unknown(j,
                   {"epochs", "steps_per_epoch", "batch_size", "lr", "weight_decay", "patience", "early_stopping",
                    "seed", "ic", "augment"},
                   "fine-tuning");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.patience = j.value("patience", c.patience);
        c.early_stopping = j.value("early_stopping", c.early_stopping);
        c.seed = j.value("seed", c.seed);
        if (j.contains("ic")) c.ic = j["ic"].get<IcConfig>();
        if (j.contains("augment")) c.augment = j["augment"].get<augment::AugmentConfig>();
    } catch (json::exception const& e) {
        throw ConfigError(std::string("bad fine-tuning config: ") + e.what());
    }
}

void to_json(json& j, ClassifyConfig const& c) {
    j = json{{"epochs", c.epochs},   {"lr", c.lr},     {"weight_decay", c.weight_decay},
             {"batch_size", c.batch_size}, {"seed", c.seed}, {"crop", c.crop}};
}

void from_json(json const& j, ClassifyConfig& c) {
    reject_unknown(j, {"epochs", "lr", "weight_decay", "batch_size", "seed", "crop"}, "classification");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        if (j.contains("crop")) c.crop = read_shape(j["crop"]);
    } catch (json::exception const& e) {
        throw ConfigError(std::string("bad classification config: ") + e.what());
    }
}

} // namespace mass::downstream
