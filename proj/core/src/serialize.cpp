#include "qforest/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "qforest/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "model container serialization assumes a little-endian host");

namespace qforest {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'Q', 'F', 'M', 'O', 'D', 'E', 'L', '\n'};
constexpr int kFormatVersion = 1;
constexpr const char* kTopologyName = "interleaved-rc";

void write_container(const std::string& path, const json& header,
                     const std::vector<const Tensor*>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::string head = header.dump();
    const std::uint64_t len = head.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const Tensor* t : tensors) {
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
    if (!out) throw Error("write failed for " + path);
}

struct Container {
    json header;
    std::vector<Tensor> tensors;
};

json read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not a qforest model container: " + path);
    }
    std::uint64_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 26)) {
        throw FormatError("corrupt header length in " + path);
    }
    std::string head(len, '\0');
    if (!in.read(head.data(), static_cast<std::streamsize>(len))) {
        throw FormatError("truncated header in " + path);
    }
    json header = json::parse(head, nullptr, false);
    if (header.is_discarded()) throw FormatError("header is not valid JSON in " + path);
    if (header.value("format_version", 0) != kFormatVersion) {
        throw FormatError("unsupported format version in " + path);
    }
    return header;
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingPathError(path);
    Container c;
    c.header = read_header(in, path);

    for (const json& entry : c.header.at("tensors")) {
        std::vector<std::size_t> shape;
        for (const json& d : entry.at("shape")) shape.push_back(d.get<std::size_t>());
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double)))) {
            throw FormatError("payload shorter than the declared tensor manifest in " + path);
        }
        c.tensors.push_back(std::move(t));
    }
    char extra;
    if (in.read(&extra, 1)) {
        throw FormatError("payload longer than the declared tensor manifest in " + path);
    }
    return c;
}

json shifts_to_json(const std::vector<std::array<int, 2>>& shifts) {
    json arr = json::array();
    for (const auto& s : shifts) arr.push_back(json::array({s[0], s[1]}));
    return arr;
}

std::vector<std::array<int, 2>> shifts_from_json(const json& arr) {
    std::vector<std::array<int, 2>> shifts;
    for (const json& s : arr) shifts.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    return shifts;
}

json tensor_manifest_entry(const std::string& name, const Tensor& t) {
    return json{{"name", name}, {"shape", t.shape}};
}

}  // namespace

ModelKind peek_kind(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingPathError(path);
    const json header = read_header(in, path);
    const std::string kind = header.value("kind", "");
    if (kind == "ftn") return ModelKind::ftn;
    if (kind == "qftn") return ModelKind::qftn;
    throw FormatError("unknown model kind '" + kind + "' in " + path);
}

void save_ftn(const std::string& path, const FTNClassifier& model) {
    json header{{"format_version", kFormatVersion},
                {"kind", "ftn"},
                {"d", model.num_classes},
                {"k", model.channels},
                {"chi", model.chi()},
                {"L", model.side()},
                {"topology", kTopologyName},
                {"shifts", shifts_to_json(model.shifts)},
                {"is_canonical", model.is_canonical()}};
    json manifest = json::array();
    std::vector<const Tensor*> tensors;
    for (std::size_t t = 0; t < model.ttns.size(); ++t) {
        for (std::size_t i = 0; i < model.ttns[t].node_tensors.size(); ++i) {
            const std::string name = "ttn" + std::to_string(t) + "/node" + std::to_string(i);
            manifest.push_back(tensor_manifest_entry(name, model.ttns[t].node_tensors[i]));
            tensors.push_back(&model.ttns[t].node_tensors[i]);
        }
    }
    manifest.push_back(tensor_manifest_entry("head_w", model.head_w));
    tensors.push_back(&model.head_w);
    const Tensor bias({model.head_b.size()}, model.head_b);
    manifest.push_back(tensor_manifest_entry("head_b", bias));
    tensors.push_back(&bias);
    header["tensors"] = std::move(manifest);
    write_container(path, header, tensors);
}

FTNClassifier load_ftn(const std::string& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "ftn") {
        throw StateError("container " + path + " does not hold an ftn model");
    }
    FTNClassifier model;
    model.num_classes = c.header.at("d").get<std::size_t>();
    model.channels = c.header.at("k").get<std::size_t>();
    model.shifts = shifts_from_json(c.header.at("shifts"));
    const std::size_t side = c.header.at("L").get<std::size_t>();
    const bool canonical = c.header.value("is_canonical", false);
    const TreeTopology topo = build_topology(side);

    std::size_t pos = 0;
    for (std::size_t t = 0; t < model.num_classes; ++t) {
        TTNClassifier ttn;
        ttn.topology = topo;
        ttn.chi = model.chi();
        ttn.is_canonical = canonical;
        for (std::size_t i = 0; i < topo.num_nodes(); ++i) {
            ttn.node_tensors.push_back(std::move(c.tensors.at(pos++)));
        }
        model.ttns.push_back(std::move(ttn));
    }
    model.head_w = std::move(c.tensors.at(pos++));
    const Tensor bias = std::move(c.tensors.at(pos++));
    model.head_b = bias.data;
    if (pos != c.tensors.size()) throw FormatError("unexpected extra tensors in " + path);
    return model;
}

void save_qftn(const std::string& path, const QFTNModel& model) {
    json scales = json::array();
    for (const QTTNCircuit& c : model.circuits) scales.push_back(c.scale);
    json header{{"format_version", kFormatVersion},
                {"kind", "qftn"},
                {"d", model.num_classes},
                {"k", model.channels},
                {"chi", model.chi()},
                {"L", model.side()},
                {"topology", kTopologyName},
                {"shifts", shifts_to_json(model.shifts)},
                {"w", model.w()},
                {"scales", std::move(scales)}};
    json manifest = json::array();
    std::vector<const Tensor*> tensors;
    for (std::size_t t = 0; t < model.circuits.size(); ++t) {
        const QTTNCircuit& c = model.circuits[t];
        for (std::size_t i = 1; i < c.internal_unitaries.size(); ++i) {
            const std::string name = "circuit" + std::to_string(t) + "/u" + std::to_string(i);
            manifest.push_back(tensor_manifest_entry(name, c.internal_unitaries[i]));
            tensors.push_back(&c.internal_unitaries[i]);
        }
        const std::string top_name = "circuit" + std::to_string(t) + "/top";
        manifest.push_back(tensor_manifest_entry(top_name, c.top_unitary));
        tensors.push_back(&c.top_unitary);
    }
    manifest.push_back(tensor_manifest_entry("head_w", model.head_w));
    tensors.push_back(&model.head_w);
    const Tensor bias({model.head_b.size()}, model.head_b);
    manifest.push_back(tensor_manifest_entry("head_b", bias));
    tensors.push_back(&bias);
    header["tensors"] = std::move(manifest);
    write_container(path, header, tensors);
}

QFTNModel load_qftn(const std::string& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "qftn") {
        throw StateError("container " + path + " does not hold a qftn model");
    }
    QFTNModel model;
    model.num_classes = c.header.at("d").get<std::size_t>();
    model.channels = c.header.at("k").get<std::size_t>();
    model.shifts = shifts_from_json(c.header.at("shifts"));
    const std::size_t side = c.header.at("L").get<std::size_t>();
    const double w = c.header.at("w").get<double>();
    const json& scales = c.header.at("scales");
    const TreeTopology topo = build_topology(side);

    std::size_t pos = 0;
    for (std::size_t t = 0; t < model.num_classes; ++t) {
        QTTNCircuit circuit;
        circuit.topology = topo;
        circuit.chi = model.chi();
        circuit.w = w;
        circuit.scale = scales.at(t).get<double>();
        circuit.internal_unitaries.resize(topo.num_nodes());
        for (std::size_t i = 1; i < topo.num_nodes(); ++i) {
            circuit.internal_unitaries[i] = std::move(c.tensors.at(pos++));
        }
        circuit.top_unitary = std::move(c.tensors.at(pos++));
        model.circuits.push_back(std::move(circuit));
    }
    model.head_w = std::move(c.tensors.at(pos++));
    const Tensor bias = std::move(c.tensors.at(pos++));
    model.head_b = bias.data;
    if (pos != c.tensors.size()) throw FormatError("unexpected extra tensors in " + path);
    return model;
}

}  // namespace qforest
