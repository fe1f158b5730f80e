#include "qforest/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qforest/error.hpp"
#include "qforest/rng.hpp"

namespace qforest {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& section) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.contains(it.key())) {
            throw ArgumentError("unknown config key '" + it.key() + "' in " + section);
        }
    }
}

DatasetSpec parse_dataset(const json& obj) {
    reject_unknown_keys(obj,
                        {"name", "image_path", "label_path", "test_image_path",
                         "test_label_path", "batch_paths", "test_batch_paths", "downscale",
                         "subset", "test_subset", "seed"},
                        "dataset");
    DatasetSpec spec;
    spec.name = obj.value("name", "");
    spec.image_path = obj.value("image_path", "");
    spec.label_path = obj.value("label_path", "");
    spec.test_image_path = obj.value("test_image_path", "");
    spec.test_label_path = obj.value("test_label_path", "");
    if (obj.contains("batch_paths")) {
        spec.batch_paths = obj.at("batch_paths").get<std::vector<std::string>>();
    }
    if (obj.contains("test_batch_paths")) {
        spec.test_batch_paths = obj.at("test_batch_paths").get<std::vector<std::string>>();
    }
    spec.downscale_side = obj.value("downscale", std::size_t{0});
    spec.subset = obj.value("subset", std::size_t{0});
    spec.test_subset = obj.value("test_subset", std::size_t{0});
    spec.seed = obj.value("seed", std::uint64_t{1234});
    if (spec.name != "mnist" && spec.name != "cifar10") {
        throw ArgumentError("dataset.name must be \"mnist\" or \"cifar10\", got \"" +
                            spec.name + "\"");
    }
    return spec;
}

ModelSpec parse_model(const json& obj) {
    reject_unknown_keys(obj, {"classes", "channels", "chi", "shifts"}, "model");
    ModelSpec spec;
    spec.classes = obj.value("classes", std::size_t{10});
    spec.channels = obj.value("channels", std::size_t{1});
    if (obj.contains("chi")) {
        const std::size_t chi = obj.at("chi").get<std::size_t>();
        if (chi != (std::size_t{1} << spec.channels)) {
            throw ArgumentError("model.chi must equal 2^channels = " +
                                std::to_string(std::size_t{1} << spec.channels));
        }
    }
    if (obj.contains("shifts")) {
        for (const json& s : obj.at("shifts")) {
            spec.shifts.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
        }
        if (spec.shifts.size() != spec.classes) {
            throw ArgumentError("model.shifts must list one (dv, dh) pair per class");
        }
    }
    return spec;
}

TrainConfig parse_train(const json& obj) {
    reject_unknown_keys(obj,
                        {"learning_rate", "batch_size", "epochs", "beta1", "beta2", "epsilon",
                         "seed", "subset"},
                        "train");
    TrainConfig cfg;
    cfg.learning_rate = obj.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = obj.value("batch_size", cfg.batch_size);
    cfg.epochs = obj.value("epochs", cfg.epochs);
    cfg.beta1 = obj.value("beta1", cfg.beta1);
    cfg.beta2 = obj.value("beta2", cfg.beta2);
    cfg.epsilon = obj.value("epsilon", cfg.epsilon);
    cfg.seed = obj.value("seed", cfg.seed);
    cfg.subset_size = obj.value("subset", cfg.subset_size);
    cfg.validate();
    return cfg;
}

EncodeConfig parse_encode(const json& obj) {
    reject_unknown_keys(obj,
                        {"delta_w", "loss_threshold", "max_epochs_per_step", "learning_rate",
                         "batch_size", "seed", "probe_gradients", "adaptive_delta_w"},
                        "encode");
    EncodeConfig cfg;
    cfg.delta_w = obj.value("delta_w", cfg.delta_w);
    cfg.loss_threshold = obj.value("loss_threshold", cfg.loss_threshold);
    cfg.max_epochs_per_step = obj.value("max_epochs_per_step", cfg.max_epochs_per_step);
    cfg.learning_rate = obj.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = obj.value("batch_size", cfg.batch_size);
    cfg.seed = obj.value("seed", cfg.seed);
    cfg.probe_gradients = obj.value("probe_gradients", cfg.probe_gradients);
    cfg.adaptive_delta_w = obj.value("adaptive_delta_w", cfg.adaptive_delta_w);
    cfg.validate();
    return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json doc = json::parse(json_text, nullptr, false);
    if (doc.is_discarded()) throw FormatError("run config is not valid JSON");
    reject_unknown_keys(doc, {"dataset", "model", "train", "encode", "output_dir"}, "config");
    RunConfig cfg;
    if (!doc.contains("dataset")) throw ArgumentError("config is missing the dataset section");
    cfg.dataset = parse_dataset(doc.at("dataset"));
    if (doc.contains("model")) cfg.model = parse_model(doc.at("model"));
    if (doc.contains("train")) cfg.train = parse_train(doc.at("train"));
    if (doc.contains("encode")) cfg.encode = parse_encode(doc.at("encode"));
    cfg.output_dir = doc.value("output_dir", cfg.output_dir);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingPathError(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string config_schema_text() {
    return R"({
  // qforest run configuration. All fields below show their defaults; only
  // dataset.name and the matching paths are required.
  "dataset": {
    "name": "mnist",              // "mnist" or "cifar10"
    "image_path": "",             // mnist: IDX image file (training)
    "label_path": "",             // mnist: IDX label file (training)
    "test_image_path": "",        // optional held-out pair
    "test_label_path": "",
    "batch_paths": [],            // cifar10: binary batch files (training)
    "test_batch_paths": [],
    "downscale": 0,               // target side (power of two); 0 keeps native size
    "subset": 0,                  // seeded shuffle + prefix; 0 = full set
    "test_subset": 0,
    "seed": 1234                  // subset shuffle seed
  },
  "model": {
    "classes": 10,                // d: class count and number of TTNs
    "channels": 1,                // k: 1 grayscale, 3 RGB; bond dimension chi = 2^k
    "chi": 2,                     // optional; must equal 2^channels when given
    "shifts": []                  // optional [dv, dh] per TTN; default: even t ->
                                  // horizontal by t/2, odd t -> vertical by (t+1)/2
  },
  "train": {                      // FTN pre-training (Adam)
    "learning_rate": 0.001,
    "batch_size": 64,
    "epochs": 50,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "seed": 42,
    "subset": 0                   // extra prefix inside the loaded subset; 0 = all
  },
  "encode": {                     // adiabatic encoding (Riemannian SGD)
    "delta_w": 0.05,              // must divide 1 exactly
    "loss_threshold": 0,          // 0 = auto: 1.05 x loss of the model at w = 0
    "max_epochs_per_step": 30,
    "learning_rate": 0.001,
    "batch_size": 64,
    "seed": 43,
    "probe_gradients": true,      // fill grad_norm columns of the trajectory CSV
    "adaptive_delta_w": false     // halve the increment on an excessive loss jump
  },
  "output_dir": "out"
}
// Dataset paths that do not exist as written are retried under $QFOREST_DATA_DIR.
)";
}

std::string resolve_data_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) return path;
    if (const char* prefix = std::getenv("QFOREST_DATA_DIR")) {
        const fs::path candidate = fs::path(prefix) / path;
        if (fs::exists(candidate)) return candidate.string();
    }
    throw MissingPathError(path);
}

namespace {

void subset_inplace(ImageDataset& ds, std::size_t subset, std::uint64_t seed) {
    if (subset == 0 || subset >= ds.size()) return;
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(subset);
    ImageDataset out;
    out.side = ds.side;
    out.channels = ds.channels;
    out.num_classes = ds.num_classes;
    for (std::size_t i : idx) {
        out.images.push_back(std::move(ds.images[i]));
        out.labels.push_back(ds.labels[i]);
    }
    ds = std::move(out);
}

}  // namespace

LoadedData load_dataset(const DatasetSpec& spec, std::size_t subset_override) {
    LoadedData data;
    if (spec.name == "mnist") {
        if (spec.image_path.empty() || spec.label_path.empty()) {
            throw ArgumentError("mnist dataset requires image_path and label_path");
        }
        data.train = load_mnist(resolve_data_path(spec.image_path),
                                resolve_data_path(spec.label_path));
        if (!spec.test_image_path.empty()) {
            data.test = load_mnist(resolve_data_path(spec.test_image_path),
                                   resolve_data_path(spec.test_label_path));
            data.has_test = true;
        }
    } else if (spec.name == "cifar10") {
        if (spec.batch_paths.empty()) {
            throw ArgumentError("cifar10 dataset requires batch_paths");
        }
        std::vector<std::string> resolved;
        for (const std::string& p : spec.batch_paths) resolved.push_back(resolve_data_path(p));
        data.train = load_cifar10(resolved);
        if (!spec.test_batch_paths.empty()) {
            std::vector<std::string> test_resolved;
            for (const std::string& p : spec.test_batch_paths) {
                test_resolved.push_back(resolve_data_path(p));
            }
            data.test = load_cifar10(test_resolved);
            data.has_test = true;
        }
    } else {
        throw ArgumentError("unknown dataset name: " + spec.name);
    }

    if (spec.downscale_side != 0) {
        data.train = downscale(data.train, spec.downscale_side);
        if (data.has_test) data.test = downscale(data.test, spec.downscale_side);
    }
    const std::size_t subset = subset_override != 0 ? subset_override : spec.subset;
    subset_inplace(data.train, subset, spec.seed);
    if (data.has_test) subset_inplace(data.test, spec.test_subset, spec.seed + 1);
    return data;
}

}  // namespace qforest
