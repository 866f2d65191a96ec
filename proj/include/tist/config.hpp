#pragma once

#include <json.hpp>
#include <string>

#include "tist/data.hpp"
#include "tist/trainer.hpp"

namespace tist {

using Json = nlohmann::json;

void to_json(Json& j, const AugmentConfig& c);
void from_json(const Json& j, AugmentConfig& c);
void to_json(Json& j, const LossWeights& c);
void from_json(const Json& j, LossWeights& c);
void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);
void to_json(Json& j, const DomainShift& c);
void from_json(const Json& j, DomainShift& c);
void to_json(Json& j, const SynthConfig& c);
void from_json(const Json& j, SynthConfig& c);
void to_json(Json& j, const StepMetrics& m);
void from_json(const Json& j, StepMetrics& m);
void to_json(Json& j, const EpochRecord& r);
void from_json(const Json& j, EpochRecord& r);
void to_json(Json& j, const History& h);
void from_json(const Json& j, History& h);
void to_json(Json& j, const DiceResult& r);
void to_json(Json& j, const FoldSplit& f);

// 16 hex digits of FNV-1a over the compact, key-sorted serialization.
std::string config_hash(const Json& canonical);

}  // namespace tist
