#pragma once

#include <httplib.h>

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>

namespace pvrl::detail {

struct BaseUrl {
    std::string origin; // scheme://host[:port]
    std::string prefix; // path prefix without trailing slash
};

inline BaseUrl split_base_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("base url needs a scheme: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw std::invalid_argument("unsupported url scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    BaseUrl out;
    out.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) out.prefix = url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

inline void set_timeouts(httplib::Client& client, std::chrono::milliseconds connect, std::chrono::milliseconds read)
{
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(connect));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(read));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(read));
}

/// Errors for which the request never reached the server, so a retry cannot duplicate work.
inline bool is_connect_failure(httplib::Error e)
{
    return e == httplib::Error::Connection || e == httplib::Error::ConnectionTimeout ||
           e == httplib::Error::BindIPAddress || e == httplib::Error::SSLConnection;
}

} // namespace pvrl::detail
