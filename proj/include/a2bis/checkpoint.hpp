#ifndef A2BIS_CHECKPOINT_HPP_
#define A2BIS_CHECKPOINT_HPP_

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "a2bis/net.hpp"
#include "a2bis/tensor_io.hpp"

namespace a2bis {

// Checkpoint directory: one A2BT file per named tensor (flattened to
// 1 x 1 x numel) plus manifest.json mapping name -> true shape.
template <typename T>
inline void save_checkpoint(const ParamStore<T>& params, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    for (const auto& [name, t] : params.tensors) {
        manifest[name] = params.shapes.at(name);
        DenseMap flat(1, 1, static_cast<int>(t.size()));
        for (size_t i = 0; i < t.size(); ++i) flat.v[i] = static_cast<float>(t[i]);
        write_tensor(flat, (std::filesystem::path(dir) / (name + ".a2bt")).string());
    }
    std::ofstream f(std::filesystem::path(dir) / "manifest.json");
    f << manifest.dump(2) << "\n";
}

template <typename T>
inline ParamStore<T> load_checkpoint(const std::string& dir) {
    std::ifstream f(std::filesystem::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("checkpoint: missing manifest.json in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(f);
    ParamStore<T> p;
    for (const auto& [name, shape] : manifest.items()) {
        p.shapes[name] = shape.template get<std::vector<int>>();
        DenseMap flat = read_tensor((std::filesystem::path(dir) / (name + ".a2bt")).string());
        std::vector<T> t(flat.v.size());
        for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(flat.v[i]);
        p.tensors[name] = std::move(t);
    }
    return p;
}

}  // namespace a2bis

#endif  // A2BIS_CHECKPOINT_HPP_
