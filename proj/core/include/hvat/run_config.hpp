#pragma once

#include <string>

#include "hvat/model.hpp"
#include "hvat/training.hpp"

namespace hvat {

struct IoConfig {
    std::string out_dir = ".";
    std::string checkpoint_path;  // empty -> out_dir + "/model.ckpt"

    std::string resolved_checkpoint_path() const {
        return checkpoint_path.empty() ? out_dir + "/model.ckpt" : checkpoint_path;
    }
};

/// One run = model architecture + optimization protocol + output locations.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    IoConfig io;

    void validate() const {
        model.validate();
        train.validate();
        if (model.vocab_size != train.vocab_size) {
            throw ConfigError("run config: model.vocab_size (" +
                              std::to_string(model.vocab_size) + ") and train.vocab_size (" +
                              std::to_string(train.vocab_size) + ") disagree");
        }
        // Decoder sequences carry a BOS/EOS token on top of the payload.
        if (model.max_len < train.seq_len_hi + 1) {
            throw ConfigError("run config: model.max_len (" + std::to_string(model.max_len) +
                              ") too small for train.seq_len_hi (" +
                              std::to_string(train.seq_len_hi) + ") plus BOS/EOS");
        }
    }
};

// JSON text <-> config structures. Parsers reject unknown keys and report the
// offending key; serializers materialize every default so an echoed config is
// complete.
std::string model_config_to_json_string(const ModelConfig& cfg);
ModelConfig model_config_from_json_string(const std::string& text);

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config_file(const std::string& path);
std::string effective_config_json(const RunConfig& cfg);

}  // namespace hvat
