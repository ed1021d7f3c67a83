"""
Version compatibility checks for the numerical and configuration dependencies.
"""
from importlib import metadata
from typing import Dict, Optional, Tuple
import logging
import sys

from packaging.version import InvalidVersion, Version

logger = logging.getLogger(__name__)

# Minimum versions of key dependencies
REQUIRED_VERSIONS = {
    "numpy": "1.24.0",
    "scipy": "1.10.0",
    "gymnasium": "0.29.0",
    "pandas": "2.0.0",
    "pydantic": "2.0.0",
    "pydantic-settings": "2.0.0",
    "PyYAML": "6.0",
    "cloudpickle": "2.2.0",
    "psutil": "5.9.0",
}


def check_package_version(package_name: str, min_version: str) -> Tuple[bool, Optional[str], Optional[str]]:
    """
    Check if a package meets the minimum version requirement.

    Returns:
        Tuple of (is_compatible, installed_version, error_message)
    """
    try:
        installed_version = metadata.version(package_name)
    except metadata.PackageNotFoundError:
        return False, None, f"Package {package_name} not found"
    try:
        is_compatible = Version(installed_version) >= Version(min_version)
    except InvalidVersion as e:
        return False, installed_version, f"Error checking {package_name} version: {str(e)}"
    error_msg = None if is_compatible else f"{package_name} requires at least {min_version}, found {installed_version}"
    return is_compatible, installed_version, error_msg


def run_compatibility_check(required: Optional[Dict[str, str]] = None) -> Dict:
    """Check every required package; returns the per-package results and the issues found."""
    results = {"is_compatible": True, "package_versions": {}, "all_issues": []}
    for pkg_name, min_version in (required or REQUIRED_VERSIONS).items():
        is_compatible, installed_version, error_msg = check_package_version(pkg_name, min_version)
        results["package_versions"][pkg_name] = {
            "required": min_version,
            "installed": installed_version,
            "compatible": is_compatible,
        }
        if not is_compatible:
            results["is_compatible"] = False
            results["all_issues"].append(error_msg)

    if results["is_compatible"]:
        logger.debug("All compatibility checks passed")
    else:
        logger.warning("Compatibility issues detected")
        for issue in results["all_issues"]:
            logger.warning(f"  - {issue}")
    return results


def verify_compatibility(exit_on_failure: bool = False, required: Optional[Dict[str, str]] = None) -> bool:
    results = run_compatibility_check(required)
    if not results["is_compatible"] and exit_on_failure:
        logger.error("Incompatible environment detected. Exiting.")
        sys.exit(1)
    return results["is_compatible"]


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    verify_compatibility(exit_on_failure=True)
    print("Environment compatibility check passed!")
