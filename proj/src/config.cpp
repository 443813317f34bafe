#include "dcl/config.hpp"

#include "dcl/errors.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace dcl {

std::string to_string(Mode m) {
    switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::Dse: return "dse";
    case Mode::DseA: return "dse_a";
    case Mode::DseAC: return "dse_a_c";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    if (s == "baseline") return Mode::Baseline;
    if (s == "dse") return Mode::Dse;
    if (s == "dse_a") return Mode::DseA;
    if (s == "dse_a_c") return Mode::DseAC;
    throw ConfigError("unknown mode '" + s + "' (expected baseline, dse, dse_a, dse_a_c)");
}

bool uses_dse(Mode m) { return m != Mode::Baseline; }
bool uses_affinity(Mode m) { return m == Mode::DseA || m == Mode::DseAC; }
bool uses_counterfactual(Mode m) { return m == Mode::DseAC; }

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) {
        throw ConfigError("config field '" + field + "' " + what);
    }
}

} // namespace

void Config::validate_weights() const {
    require(gamma >= 0.0, "gamma", "must be >= 0");
    require(alpha >= 0.0, "alpha", "must be >= 0");
    require(beta >= 0.0, "beta", "must be >= 0");
    require(theta >= 0.0, "theta", "must be >= 0");
}

void Config::validate() const {
    require(T >= 1, "T", "must be >= 1");
    require(d >= 1, "d", "must be >= 1");
    require(d_raw >= 1, "d_raw", "must be >= 1");
    require(d_s >= 1, "d_s", "must be >= 1");
    require(d_z >= 1, "d_z", "must be >= 1");
    require(d_z == d_s, "d_z", "must equal d_s (the MI(z; s) estimate compares them by cosine)");
    require(hidden >= 1, "hidden", "must be >= 1");
    require(fusion_width >= 1, "fusion_width", "must be >= 1");
    require(batch >= 2, "batch", "must be >= 2");
    require(lr > 0.0, "lr", "must be > 0");
    require(epochs >= 0, "epochs", "must be >= 0");
    require(patience >= 0, "patience", "must be >= 0");
    require(tau_nce > 0.0, "tau_nce", "must be > 0");
    require(n_max >= 0, "n_max", "must be >= 0");
    require(blur_width > 0.0, "blur_width", "must be > 0");
    validate_weights();
    require(tau_aff > 0.0, "tau_aff", "must be > 0");
    require(k >= 1, "k", "must be >= 1");
    require(cf_samples_train >= 1, "cf_samples_train", "must be >= 1");
    require(cf_samples_eval >= 1, "cf_samples_eval", "must be >= 1");
    require(materials >= 2, "materials", "must be >= 2");
    require(motions >= 2, "motions", "must be >= 2");
    require(question_templates >= 1, "question_templates", "must be >= 1");
    require(train_pairs >= 1, "train_pairs", "must be >= 1");
    require(val_pairs >= 1, "val_pairs", "must be >= 1");
    require(test_pairs >= 1, "test_pairs", "must be >= 1");
    require(train_objects >= 2, "train_objects", "must be >= 2");
    require(val_objects >= 2, "val_objects", "must be >= 2");
    require(test_objects >= 2, "test_objects", "must be >= 2");
    require(jitter >= 0.0 && jitter <= 0.1, "jitter", "must be in [0, 0.1]");
    require(frame_noise >= 0.0, "frame_noise", "must be >= 0");
    require(audio_noise >= 0.0, "audio_noise", "must be >= 0");
    require(motion_amplitude >= 0.0, "motion_amplitude", "must be >= 0");
    require(probe_iters >= 1, "probe_iters", "must be >= 1");
    require(probe_l2 >= 0.0, "probe_l2", "must be >= 0");
}

Config Config::tiny() {
    Config c;
    c.T = 4;
    c.d = 8;
    c.d_raw = 6;
    c.d_s = 4;
    c.d_z = 4;
    c.hidden = 8;
    c.fusion_width = 8;
    c.batch = 6;
    c.k = 2;
    c.question_templates = 4;
    c.train_pairs = 12;
    c.val_pairs = 6;
    c.test_pairs = 6;
    c.train_objects = 10;
    c.val_objects = 5;
    c.test_objects = 5;
    c.cf_samples_train = 2;
    c.cf_samples_eval = 2;
    return c;
}

// One table drives both directions of the JSON mapping so they cannot drift.
namespace {

using nlohmann::json;

struct Field {
    std::function<json(const Config&)> get;
    std::function<void(Config&, const json&)> set;
};

template <typename T>
Field plain(T Config::*member) {
    return {[member](const Config& c) { return json(c.*member); },
            [member](Config& c, const json& j) { c.*member = j.get<T>(); }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        {"T", plain(&Config::T)},
        {"d", plain(&Config::d)},
        {"d_raw", plain(&Config::d_raw)},
        {"d_s", plain(&Config::d_s)},
        {"d_z", plain(&Config::d_z)},
        {"hidden", plain(&Config::hidden)},
        {"fusion_width", plain(&Config::fusion_width)},
        {"batch", plain(&Config::batch)},
        {"lr", plain(&Config::lr)},
        {"epochs", plain(&Config::epochs)},
        {"patience", plain(&Config::patience)},
        {"seed", plain(&Config::seed)},
        {"mode",
         {[](const Config& c) { return json(to_string(c.mode)); },
          [](Config& c, const json& j) { c.mode = parse_mode(j.get<std::string>()); }}},
        {"train_video_encoder", plain(&Config::train_video_encoder)},
        {"tau_nce", plain(&Config::tau_nce)},
        {"n_max", plain(&Config::n_max)},
        {"blur_width", plain(&Config::blur_width)},
        {"gamma", plain(&Config::gamma)},
        {"alpha", plain(&Config::alpha)},
        {"beta", plain(&Config::beta)},
        {"theta", plain(&Config::theta)},
        {"tau_aff", plain(&Config::tau_aff)},
        {"k", plain(&Config::k)},
        {"cf_samples_train", plain(&Config::cf_samples_train)},
        {"cf_samples_eval", plain(&Config::cf_samples_eval)},
        {"tie_loss_target",
         {[](const Config& c) { return json(c.tie_loss_target == TieLossTarget::Tie ? "tie" : "factual"); },
          [](Config& c, const json& j) {
              const auto s = j.get<std::string>();
              if (s == "tie") {
                  c.tie_loss_target = TieLossTarget::Tie;
              } else if (s == "factual") {
                  c.tie_loss_target = TieLossTarget::Factual;
              } else {
                  throw ConfigError("tie_loss_target must be 'tie' or 'factual', got '" + s + "'");
              }
          }}},
        {"materials", plain(&Config::materials)},
        {"motions", plain(&Config::motions)},
        {"question_templates", plain(&Config::question_templates)},
        {"train_pairs", plain(&Config::train_pairs)},
        {"val_pairs", plain(&Config::val_pairs)},
        {"test_pairs", plain(&Config::test_pairs)},
        {"train_objects", plain(&Config::train_objects)},
        {"val_objects", plain(&Config::val_objects)},
        {"test_objects", plain(&Config::test_objects)},
        {"jitter", plain(&Config::jitter)},
        {"frame_noise", plain(&Config::frame_noise)},
        {"audio_noise", plain(&Config::audio_noise)},
        {"motion_amplitude", plain(&Config::motion_amplitude)},
        {"probe_iters", plain(&Config::probe_iters)},
        {"probe_l2", plain(&Config::probe_l2)},
    };
    return table;
}

} // namespace

nlohmann::json to_json(const Config& c) {
    json j = json::object();
    for (const auto& [name, f] : fields()) {
        j[name] = f.get(c);
    }
    return j;
}

Config config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    Config c;
    for (const auto& [key, value] : j.items()) {
        auto it = fields().find(key);
        if (it == fields().end()) {
            throw ConfigError("unknown config field '" + key + "'");
        }
        try {
            it->second.set(c, value);
        } catch (const json::exception& e) {
            throw ConfigError("config field '" + key + "': " + e.what());
        }
    }
    c.validate();
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file: " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const Config& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write config file: " + path);
    }
    out << to_json(c).dump(2) << "\n";
}

} // namespace dcl
