#include "hvat/run_config.hpp"

#include <json.hpp>

#include "hvat/io.hpp"

namespace hvat {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> known) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (key == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ConfigError(std::string("config: unknown key '") + key + "' in section '" +
                              section + "'");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* section, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + section + "." + key + "'");
    }
}

json model_to_json(const ModelConfig& m) {
    json j;
    j["vocab_size"] = m.vocab_size;
    j["d_model"] = m.d_model;
    j["n_heads"] = m.n_heads;
    j["d_k"] = m.d_k;
    j["d_v"] = m.d_v;
    j["d_a"] = m.attention_config().resolved_d_a();
    j["num_encoder_blocks"] = m.num_encoder_blocks;
    j["num_decoder_blocks"] = m.num_decoder_blocks;
    j["ffn_width"] = m.resolved_ffn_width();
    j["max_len"] = m.max_len;
    j["variant"] = to_string(m.variant);
    j["seed"] = m.seed;
    return j;
}

ModelConfig model_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: 'model' must be an object");
    check_keys(j, "model",
               {"vocab_size", "d_model", "n_heads", "d_k", "d_v", "d_a", "num_encoder_blocks",
                "num_decoder_blocks", "ffn_width", "max_len", "variant", "seed"});
    ModelConfig m;
    read_field(j, "model", "vocab_size", m.vocab_size);
    read_field(j, "model", "d_model", m.d_model);
    read_field(j, "model", "n_heads", m.n_heads);
    read_field(j, "model", "d_k", m.d_k);
    read_field(j, "model", "d_v", m.d_v);
    read_field(j, "model", "d_a", m.d_a);
    read_field(j, "model", "num_encoder_blocks", m.num_encoder_blocks);
    read_field(j, "model", "num_decoder_blocks", m.num_decoder_blocks);
    read_field(j, "model", "ffn_width", m.ffn_width);
    read_field(j, "model", "max_len", m.max_len);
    read_field(j, "model", "seed", m.seed);
    if (auto it = j.find("variant"); it != j.end()) {
        if (!it->is_string()) throw ConfigError("config: 'model.variant' must be a string");
        m.variant = parse_variant(it->get<std::string>());
    }
    return m;
}

json train_to_json(const TrainConfig& t) {
    json j;
    j["lr"] = t.lr;
    j["betas"] = {t.beta1, t.beta2};
    j["adam_eps"] = t.adam_eps;
    j["weight_decay"] = t.weight_decay;
    j["label_smoothing"] = t.label_smoothing;
    j["batch_size"] = t.batch_size;
    j["epochs"] = t.epochs;
    j["seed"] = t.seed;
    j["task"] = to_string(t.task);
    j["seq_len"] = {t.seq_len_lo, t.seq_len_hi};
    j["vocab_size"] = t.vocab_size;
    j["train_samples"] = t.train_samples;
    j["val_samples"] = t.val_samples;
    j["stop_at_accuracy"] = t.stop_at_accuracy;
    return j;
}

TrainConfig train_from_json(const json& j, size_t model_vocab) {
    if (!j.is_object()) throw ConfigError("config: 'train' must be an object");
    check_keys(j, "train",
               {"lr", "betas", "adam_eps", "weight_decay", "label_smoothing", "batch_size",
                "epochs", "seed", "task", "seq_len", "vocab_size", "train_samples", "val_samples",
                "stop_at_accuracy"});
    TrainConfig t;
    t.vocab_size = model_vocab;  // default: follow the model
    read_field(j, "train", "lr", t.lr);
    read_field(j, "train", "adam_eps", t.adam_eps);
    read_field(j, "train", "weight_decay", t.weight_decay);
    read_field(j, "train", "label_smoothing", t.label_smoothing);
    read_field(j, "train", "batch_size", t.batch_size);
    read_field(j, "train", "epochs", t.epochs);
    read_field(j, "train", "seed", t.seed);
    read_field(j, "train", "vocab_size", t.vocab_size);
    read_field(j, "train", "train_samples", t.train_samples);
    read_field(j, "train", "val_samples", t.val_samples);
    read_field(j, "train", "stop_at_accuracy", t.stop_at_accuracy);
    if (auto it = j.find("task"); it != j.end()) {
        if (!it->is_string()) throw ConfigError("config: 'train.task' must be a string");
        t.task = parse_task(it->get<std::string>());
    }
    if (auto it = j.find("betas"); it != j.end()) {
        if (!it->is_array() || it->size() != 2) {
            throw ConfigError("config: 'train.betas' must be [beta1, beta2]");
        }
        try {
            t.beta1 = (*it)[0].get<double>();
            t.beta2 = (*it)[1].get<double>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for 'train.betas'");
        }
    }
    if (auto it = j.find("seq_len"); it != j.end()) {
        if (!it->is_array() || it->size() != 2) {
            throw ConfigError("config: 'train.seq_len' must be [min, max]");
        }
        try {
            t.seq_len_lo = (*it)[0].get<size_t>();
            t.seq_len_hi = (*it)[1].get<size_t>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for 'train.seq_len'");
        }
    }
    return t;
}

json io_to_json(const IoConfig& io) {
    json j;
    j["out_dir"] = io.out_dir;
    j["checkpoint_path"] = io.resolved_checkpoint_path();
    return j;
}

IoConfig io_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: 'io' must be an object");
    check_keys(j, "io", {"out_dir", "checkpoint_path"});
    IoConfig io;
    read_field(j, "io", "out_dir", io.out_dir);
    read_field(j, "io", "checkpoint_path", io.checkpoint_path);
    return io;
}

json parse_json_text(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError(std::string("config: ") + what + " is not valid JSON");
    return j;
}

}  // namespace

std::string model_config_to_json_string(const ModelConfig& cfg) {
    return model_to_json(cfg).dump();
}

ModelConfig model_config_from_json_string(const std::string& text) {
    return model_from_json(parse_json_text(text, "model section"));
}

RunConfig parse_run_config(const std::string& json_text) {
    json j = parse_json_text(json_text, "file");
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    check_keys(j, "(top level)", {"model", "train", "io"});
    if (!j.contains("model")) throw ConfigError("config: missing 'model' section");

    RunConfig rc;
    rc.model = model_from_json(j["model"]);
    rc.train = j.contains("train") ? train_from_json(j["train"], rc.model.vocab_size)
                                   : TrainConfig{};
    if (!j.contains("train")) rc.train.vocab_size = rc.model.vocab_size;
    if (j.contains("io")) rc.io = io_from_json(j["io"]);
    rc.validate();
    return rc;
}

RunConfig load_run_config_file(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const CheckpointError& e) {
        throw ConfigError("config: cannot read '" + path + "': " + e.what());
    }
    return parse_run_config(text);
}

std::string effective_config_json(const RunConfig& cfg) {
    json j;
    j["model"] = model_to_json(cfg.model);
    j["train"] = train_to_json(cfg.train);
    j["io"] = io_to_json(cfg.io);
    return j.dump(2) + "\n";
}

}  // namespace hvat
