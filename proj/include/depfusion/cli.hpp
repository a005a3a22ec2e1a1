#pragma once

namespace depfusion::cli {

// Full command-line surface; callable in-process for tests.
// Exit codes: 0 success / all checks pass, 1 check failure,
// 2 usage or format error.
int run(int argc, const char* const* argv);

}  // namespace depfusion::cli
