#include "s2p/extractor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace s2p {

namespace {

constexpr const char* kMagic = "S2P-CHECKPOINT";

void put_double(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_double(std::istream& in) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint: truncated tensor data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(bytes[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& out,
                      const std::vector<std::pair<std::string, const ParameterSet<double>*>>& sets) {
    std::size_t count = 0;
    for (const auto& [prefix, set] : sets) count += set->size();
    out << kMagic << " 1\n" << count << '\n';
    for (const auto& [prefix, set] : sets)
        for (std::size_t i = 0; i < set->size(); ++i)
            out << prefix << '.' << set->names[i] << ' ' << set->tensors[i].rows() << ' ' << set->tensors[i].cols()
                << '\n';
    out << "DATA\n";
    for (const auto& [prefix, set] : sets)
        for (const auto& t : set->tensors)
            for (Eigen::Index k = 0; k < t.size(); ++k) put_double(out, t.data()[k]);
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const ParameterSet<double>*>>& sets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    write_checkpoint(out, sets);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<CheckpointTensor> read_checkpoint_tensors(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: empty stream");
    {
        std::istringstream hs(line);
        std::string magic;
        int version = 0;
        if (!(hs >> magic >> version) || magic != kMagic || version != 1)
            throw std::runtime_error("checkpoint: bad magic or version");
    }
    std::size_t count = 0;
    if (!std::getline(in, line) || !(std::istringstream(line) >> count))
        throw std::runtime_error("checkpoint: missing tensor count");
    std::vector<CheckpointTensor> out;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated header");
        std::istringstream ls(line);
        CheckpointTensor t;
        Eigen::Index r = 0, c = 0;
        if (!(ls >> t.name >> r >> c) || r < 0 || c < 0)
            throw std::runtime_error("checkpoint: malformed tensor line '" + line + "'");
        t.value.resize(r, c);
        out.push_back(std::move(t));
    }
    if (!std::getline(in, line) || line != "DATA") throw std::runtime_error("checkpoint: missing DATA marker");
    for (auto& t : out)
        for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = get_double(in);
    return out;
}

void read_checkpoint(std::istream& in, const std::vector<std::pair<std::string, ParameterSet<double>*>>& sets) {
    const auto tensors = read_checkpoint_tensors(in);
    std::size_t pos = 0;
    for (const auto& [prefix, set] : sets) {
        for (std::size_t i = 0; i < set->size(); ++i, ++pos) {
            if (pos >= tensors.size()) throw std::runtime_error("checkpoint: fewer tensors than expected");
            const auto& t = tensors[pos];
            const std::string expected = prefix + "." + set->names[i];
            if (t.name != expected) throw std::runtime_error("checkpoint: expected '" + expected + "', found '" + t.name + "'");
            if (t.value.rows() != set->tensors[i].rows() || t.value.cols() != set->tensors[i].cols())
                throw std::runtime_error("checkpoint: shape mismatch for '" + expected + "'");
            set->tensors[i] = t.value;
        }
    }
    if (pos != tensors.size()) throw std::runtime_error("checkpoint: more tensors than expected");
}

void load_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, ParameterSet<double>*>>& sets) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    read_checkpoint(in, sets);
}

Mlp<double> mlp_from_checkpoint(const std::vector<CheckpointTensor>& tensors, const std::string& prefix) {
    std::map<std::size_t, std::pair<const Mat<double>*, const Mat<double>*>> layers;
    const std::string head = prefix + ".layer";
    for (const auto& t : tensors) {
        if (t.name.rfind(head, 0) != 0) continue;
        const auto rest = t.name.substr(head.size());
        const auto dot = rest.find('.');
        if (dot == std::string::npos) continue;
        const std::size_t l = std::stoul(rest.substr(0, dot));
        const auto kind = rest.substr(dot + 1);
        if (kind == "weight") layers[l].first = &t.value;
        else if (kind == "bias") layers[l].second = &t.value;
    }
    if (layers.empty()) throw std::runtime_error("checkpoint: no tensors with prefix '" + prefix + "'");
    std::vector<int> dims;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto it = layers.find(l);
        if (it == layers.end() || !it->second.first || !it->second.second)
            throw std::runtime_error("checkpoint: incomplete layer " + std::to_string(l) + " for '" + prefix + "'");
        if (l == 0) dims.push_back(int(it->second.first->cols()));
        dims.push_back(int(it->second.first->rows()));
    }
    Mlp<double> m(dims);
    auto& p = m.mutable_params();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].first->cols() != p.tensors[2 * l].cols() || layers[l].second->rows() != p.tensors[2 * l + 1].rows())
            throw std::runtime_error("checkpoint: layer shapes do not chain for '" + prefix + "'");
        p.tensors[2 * l] = *layers[l].first;
        p.tensors[2 * l + 1] = *layers[l].second;
    }
    return m;
}

}  // namespace s2p
