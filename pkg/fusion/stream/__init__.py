from .protocol import Aligned, Bye, FrameMessage, Hello, decode, encode

__all__ = ['Aligned', 'Bye', 'FrameMessage', 'Hello', 'decode', 'encode']
