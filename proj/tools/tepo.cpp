#include "tepo/cli.hpp"

int main(int argc, char** argv) { return tepo::cli::dispatch(argc, argv); }
