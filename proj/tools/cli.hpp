#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "fairscreen/gateway.hpp"

namespace fairscreen::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Supplies the transport for live and record modes. Empty means HTTP.
using TransportFactory = std::function<std::unique_ptr<Transport>()>;

// args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                const TransportFactory& transport_factory = {});

}  // namespace fairscreen::cli
