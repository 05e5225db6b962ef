#include "vlgor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace vlgor::ckpt {

using nlohmann::json;

void save_checkpoint(const std::string& path, const std::string& arch,
                     const std::vector<nn::ParamView<float>>& params,
                     const std::map<std::string, std::string>& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    json header;
    header["format"] = kFormat;
    header["arch"] = arch;
    header["scalar"] = "f32";
    json plist = json::array();
    for (const auto& p : params) plist.push_back({{"name", p.name}, {"shape", p.shape}});
    header["params"] = std::move(plist);
    header["meta"] = meta;
    out << header.dump() << "\n";
    for (const auto& p : params) {
        out.write(reinterpret_cast<const char*>(p.value),
                  static_cast<std::streamsize>(p.size * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing " + path);
}

namespace {

json parse_header(std::ifstream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing checkpoint header");
    json header;
    try {
        header = json::parse(line);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": bad checkpoint header: " + e.what());
    }
    if (header.at("format").get<std::string>() != kFormat)
        throw std::runtime_error(path + ": unsupported checkpoint format");
    return header;
}

}  // namespace

std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   const std::string& arch,
                                                   std::vector<nn::ParamView<float>>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const json header = parse_header(in, path);
    const std::string stored_arch = header.at("arch").get<std::string>();
    if (stored_arch != arch)
        throw std::runtime_error(path + ": architecture mismatch: checkpoint '" + stored_arch +
                                 "' vs expected '" + arch + "'");
    const json& plist = header.at("params");
    if (plist.size() != params.size())
        throw std::runtime_error(path + ": parameter count mismatch: " +
                                 std::to_string(plist.size()) + " stored vs " +
                                 std::to_string(params.size()) + " expected");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const json& entry = plist[i];
        if (entry.at("name").get<std::string>() != params[i].name ||
            entry.at("shape").get<std::vector<int>>() != params[i].shape)
            throw std::runtime_error(path + ": parameter mismatch at '" + params[i].name + "'");
        in.read(reinterpret_cast<char*>(params[i].value),
                static_cast<std::streamsize>(params[i].size * sizeof(float)));
        if (!in) throw std::runtime_error(path + ": truncated data for '" + params[i].name + "'");
    }
    std::map<std::string, std::string> meta;
    if (header.contains("meta")) meta = header["meta"].get<std::map<std::string, std::string>>();
    return meta;
}

std::map<std::string, std::string> read_checkpoint_meta(const std::string& path,
                                                        std::string* arch) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const json header = parse_header(in, path);
    if (arch) *arch = header.at("arch").get<std::string>();
    std::map<std::string, std::string> meta;
    if (header.contains("meta")) meta = header["meta"].get<std::map<std::string, std::string>>();
    return meta;
}

}  // namespace vlgor::ckpt
