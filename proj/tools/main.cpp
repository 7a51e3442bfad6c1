#include "tempologic/cli.hpp"

int main(int argc, char** argv) { return tempologic::run_cli(argc, argv); }
