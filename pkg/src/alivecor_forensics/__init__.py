"""Forensic extraction of Kardia ECG app artifacts from Android and iOS dumps."""

__version__ = "0.1.0"
